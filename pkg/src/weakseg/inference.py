"""Patch- and slide-level inference with the classification gate.

The segmenter produces a per-pixel class distribution; the phase-1
classifier supplies patch-level class probabilities. Channels whose
classifier probability is at or below epsilon are zeroed (no
renormalization) before the per-pixel argmax. When every channel would
close, the ungated argmax is returned instead and a warning logged.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
import torch

from .backbone import TissueClassifier, TissueSegmenter, load_checkpoint
from .datamodel import Patch, ProbabilityMap, SegmentationMask, TissueTaxonomy
from .errors import AllChannelsClosed, ShapeError
from .metrics import white_background_mask
from .pseudomask import classify_patch
from .wsi import ProbabilityAccumulator, finalize, plan_tiles

log = logging.getLogger(__name__)


def apply_gate(
    probs: ProbabilityMap, class_probs: np.ndarray, epsilon: float
) -> ProbabilityMap:
    """Zero every channel whose patch-level probability is <= epsilon."""
    y = np.asarray(class_probs, dtype=np.float64)
    if y.shape != (probs.num_classes,):
        raise ShapeError(f"class probs must have length {probs.num_classes}")
    if y.min() < 0 or y.max() > 1:
        raise ValueError("class probabilities must lie in [0, 1]")
    closed = y <= epsilon
    if closed.all():
        raise AllChannelsClosed(f"every class probability is <= {epsilon}")
    gated = probs.probs.copy()
    gated[closed] = 0.0
    return ProbabilityMap(gated, probs.valid)


def _to_model(model_or_ckpt, expected):
    if isinstance(model_or_ckpt, (str, Path)):
        model, _, _ = load_checkpoint(model_or_ckpt)
    else:
        model = model_or_ckpt
    if not isinstance(model, expected):
        raise ShapeError(f"expected a {expected.__name__} checkpoint")
    return model


def predict_probability_map(
    segmenter: TissueSegmenter, patch: Patch, valid: np.ndarray | None = None
) -> ProbabilityMap:
    """Softmax class probabilities from the segmenter for one patch."""
    x = torch.from_numpy(np.ascontiguousarray(patch.pixels.transpose(2, 0, 1))).float()
    segmenter.eval()
    with torch.no_grad():
        logits = segmenter(x.unsqueeze(0))[0]
        probs = torch.softmax(logits, dim=0).numpy().astype(np.float64)
    return ProbabilityMap(np.clip(probs, 0.0, 1.0), valid)


def segment_patch(
    patch: Patch,
    seg_model_or_ckpt,
    cls_model_or_ckpt,
    taxonomy: TissueTaxonomy,
    epsilon: float = 0.1,
    gate: bool = True,
) -> SegmentationMask:
    """Gated per-pixel argmax segmentation of one patch."""
    segmenter = _to_model(seg_model_or_ckpt, TissueSegmenter)
    valid = (
        white_background_mask(patch)
        if taxonomy.background_policy == "white_threshold"
        else None
    )
    pmap = predict_probability_map(segmenter, patch, valid)
    if gate:
        classifier = _to_model(cls_model_or_ckpt, TissueClassifier)
        y = classify_patch(classifier, patch)
        try:
            pmap = apply_gate(pmap, y, epsilon)
        except AllChannelsClosed:
            log.warning(
                "gate closed every channel for patch %s (eps=%.3g); using ungated argmax",
                patch.patch_id,
                epsilon,
            )
    labels = np.argmax(pmap.probs, axis=0)
    return SegmentationMask(labels, pmap.valid)


def _stitch(
    tiles,
    extent: tuple[int, int],
    segmenter: TissueSegmenter,
    classifier: TissueClassifier | None,
    num_classes: int,
    epsilon: float,
    sum_dtype,
) -> tuple[ProbabilityAccumulator, int]:
    acc = ProbabilityAccumulator(num_classes, extent, dtype=np.dtype(sum_dtype))
    fallbacks = 0
    for origin, patch in tiles:
        pmap = predict_probability_map(segmenter, patch)
        if classifier is not None:
            y = classify_patch(classifier, patch)
            try:
                pmap = apply_gate(pmap, y, epsilon)
            except AllChannelsClosed:
                fallbacks += 1
        acc.accumulate(pmap.probs, origin)
    return acc, fallbacks


def segment_slide(
    slide_rgb: np.ndarray,
    seg_model_or_ckpt,
    cls_model_or_ckpt,
    taxonomy: TissueTaxonomy,
    tile: int = 224,
    stride: int = 112,
    epsilon: float = 0.1,
    gate: bool = True,
    sum_dtype=np.float64,
) -> tuple[SegmentationMask, ProbabilityMap, dict]:
    """Overlap-tile a flat RGB slide, average probabilities, argmax.

    The gate runs per tile (each tile gets its own classifier
    probabilities) before its map enters the accumulator.
    """
    t0 = time.monotonic()
    segmenter = _to_model(seg_model_or_ckpt, TissueSegmenter)
    classifier = _to_model(cls_model_or_ckpt, TissueClassifier) if gate else None
    slide = np.asarray(slide_rgb, dtype=np.float64)
    if slide.ndim != 3 or slide.shape[2] != 3:
        raise ShapeError("slide must be rows x cols x 3")
    if slide.max() > 1.0:
        slide = slide / 255.0
    extent = slide.shape[:2]
    origins = plan_tiles(extent, (tile, tile), (stride, stride))
    tiles = (
        ((r, c), Patch(slide[r : r + tile, c : c + tile], f"tile_{r}_{c}"))
        for r, c in origins
    )
    acc, fallbacks = _stitch(
        tiles, extent, segmenter, classifier, taxonomy.num_classes, epsilon, sum_dtype
    )
    mask, mean = finalize(acc)
    if taxonomy.background_policy == "white_threshold":
        valid = white_background_mask(Patch(slide, "slide"))
        mask = SegmentationMask(mask.labels, valid)
        mean = ProbabilityMap(mean.probs, valid)
    report = {
        "tiles": len(origins),
        "tile": tile,
        "stride": stride,
        "eps": epsilon if gate else None,
        "gate": gate,
        "gate_fallbacks": fallbacks,
        "extent": list(extent),
        "runtime_s": round(time.monotonic() - t0, 3),
    }
    return mask, mean, report


def segment_tile_directory(
    tile_dir: str | Path,
    seg_model_or_ckpt,
    cls_model_or_ckpt,
    taxonomy: TissueTaxonomy,
    epsilon: float = 0.1,
    gate: bool = True,
    sum_dtype=np.float64,
) -> tuple[SegmentationMask, ProbabilityMap, dict]:
    """Stitch pre-extracted tiles listed in ``<dir>/origins.jsonl``.

    Each index line is ``{"path": ..., "origin": [row, col]}``; the
    slide extent is the tight bounding box of the tiles.
    """
    import json

    t0 = time.monotonic()
    tile_dir = Path(tile_dir)
    index_path = tile_dir / "origins.jsonl"
    entries = [
        json.loads(line)
        for line in index_path.read_text().splitlines()
        if line.strip()
    ]
    if not entries:
        raise ShapeError(f"no tiles listed in {index_path}")
    segmenter = _to_model(seg_model_or_ckpt, TissueSegmenter)
    classifier = _to_model(cls_model_or_ckpt, TissueClassifier) if gate else None

    loaded = []
    rows = cols = 0
    for entry in entries:
        patch = Patch.from_image(tile_dir / entry["path"])
        r, c = int(entry["origin"][0]), int(entry["origin"][1])
        rows = max(rows, r + patch.height)
        cols = max(cols, c + patch.width)
        loaded.append(((r, c), patch))
    acc, fallbacks = _stitch(
        loaded, (rows, cols), segmenter, classifier, taxonomy.num_classes, epsilon, sum_dtype
    )
    mask, mean = finalize(acc)
    report = {
        "tiles": len(loaded),
        "tile": None,
        "stride": None,
        "eps": epsilon if gate else None,
        "gate": gate,
        "gate_fallbacks": fallbacks,
        "extent": [rows, cols],
        "runtime_s": round(time.monotonic() - t0, 3),
    }
    return mask, mean, report
