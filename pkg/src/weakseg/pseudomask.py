"""Pixel-level pseudo masks from a trained classifier via Grad-CAM.

For every class, the gradient of its logit is taken with respect to the
activations at a tap; the spatial mean of that gradient weights the
activation channels, the weighted sum is rectified, and each class map
is normalized to [0, 1] by its maximum. Maps are produced independently
at all three taps from the same forward pass. A mask is the per-pixel
argmax over the present classes' upsampled maps.

Dropout attention is off here (mu = 1): masks come from the trained
model's plain forward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .backbone import TissueClassifier, load_checkpoint
from .datamodel import (
    TAPS,
    CamStack,
    Manifest,
    Patch,
    PseudoMaskSet,
    SegmentationMask,
)
from .errors import EmptyLabel, NumericalError, ShapeError


@dataclass(frozen=True)
class GradCamConfig:
    taps: tuple[str, ...] = TAPS
    relu_on_map: bool = True
    present_class_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not set(self.taps) <= set(TAPS):
            raise ValueError(f"taps must be a subset of {TAPS}")


def bilinear_resize(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with half-pixel-center alignment."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    oh, ow = out_hw
    rows = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0.0, h - 1.0)
    cols = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = arr[np.ix_(r0, c0)] * (1 - fc) + arr[np.ix_(r0, c1)] * fc
    bot = arr[np.ix_(r1, c0)] * (1 - fc) + arr[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def _patch_to_tensor(patch: Patch) -> torch.Tensor:
    arr = np.ascontiguousarray(patch.pixels.transpose(2, 0, 1))
    return torch.from_numpy(arr).float().unsqueeze(0)


def _resolve_model(model_or_checkpoint) -> TissueClassifier:
    if isinstance(model_or_checkpoint, (str, Path)):
        model, _, _ = load_checkpoint(model_or_checkpoint)
        return model
    return model_or_checkpoint


def _grad_cam_maps(
    model: TissueClassifier, patch: Patch, taps: Sequence[str], relu_on_map: bool = True
) -> dict[str, np.ndarray]:
    """Per-class localization maps at each requested tap (c x h x w each)."""
    model.eval()
    x = _patch_to_tensor(patch).requires_grad_(True)
    fwd = model(x, mu=1.0)
    acts = [fwd.taps[t] for t in taps]
    logits = fwd.logits[0]

    out = {t: np.empty((model.num_classes,) + tuple(fwd.taps[t].shape[2:])) for t in taps}
    for k in range(model.num_classes):
        grads = torch.autograd.grad(
            logits[k], acts, retain_graph=k < model.num_classes - 1
        )
        for tap, act, grad in zip(taps, acts, grads):
            alpha = grad.mean(dim=(2, 3), keepdim=True)
            cam = (alpha * act).sum(dim=1)[0]
            if relu_on_map:
                cam = torch.relu(cam)
            cam_np = cam.detach().numpy().astype(np.float64)
            if not np.isfinite(cam_np).all():
                raise NumericalError(f"non-finite grad-cam values at {tap} for class {k}")
            peak = cam_np.max()
            out[tap][k] = cam_np / peak if peak > 0 else cam_np
    return out


def grad_cam(model_or_checkpoint, patch: Patch, tap: str = "bn7") -> CamStack:
    """Normalized per-class Grad-CAM maps for one patch at one tap."""
    model = _resolve_model(model_or_checkpoint)
    maps = _grad_cam_maps(model, patch, [tap])
    return CamStack(maps[tap], tap)


def masks_from_cams(
    cams: CamStack, present: Sequence[int], out_hw: tuple[int, int]
) -> np.ndarray:
    """Argmax mask over present classes' bilinearly upsampled maps.

    Only the listed classes compete; ties go to the lowest class index.
    """
    present = sorted(set(int(k) for k in present))
    if not present:
        raise EmptyLabel("at least one class must be present")
    if any(k < 0 or k >= cams.num_classes for k in present):
        raise ShapeError("present class index outside the cam stack")
    stack = np.stack([bilinear_resize(cams.maps[k], out_hw) for k in present])
    winner = np.argmax(stack, axis=0)
    return np.asarray(present, dtype=np.int64)[winner]


def classify_patch(model_or_checkpoint, patch: Patch) -> np.ndarray:
    """Per-class sigmoid probabilities from the classifier (dropout off)."""
    model = _resolve_model(model_or_checkpoint)
    model.eval()
    with torch.no_grad():
        out = model(_patch_to_tensor(patch), mu=1.0)
        return torch.sigmoid(out.logits)[0].numpy().astype(np.float64)


def predicted_present(
    probs: np.ndarray, threshold: float = 0.5
) -> tuple[int, ...]:
    """Class indices above threshold; falls back to the top class if none."""
    present = tuple(int(k) for k in np.flatnonzero(probs > threshold))
    return present if present else (int(np.argmax(probs)),)


def build_pseudo_masks(
    model_or_checkpoint,
    patch: Patch,
    present: Sequence[int],
    config: GradCamConfig = GradCamConfig(),
) -> PseudoMaskSet:
    """Pseudo masks at every configured tap for one patch."""
    model = _resolve_model(model_or_checkpoint)
    maps = _grad_cam_maps(model, patch, list(config.taps), config.relu_on_map)
    out_hw = (patch.height, patch.width)
    masks = {
        tap: masks_from_cams(CamStack(maps[tap], tap), present, out_hw)
        for tap in config.taps
    }
    return PseudoMaskSet(masks, patch.patch_id, model.num_classes)


@dataclass
class MaskStore:
    """On-disk pseudo-mask layout: ``<root>/<tap>/<patch_id>.png`` + index."""

    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def mask_path(self, tap: str, patch_id: str) -> Path:
        return self.root / tap / f"{patch_id}.png"

    def has_all_taps(self, patch_id: str) -> bool:
        return all(self.mask_path(t, patch_id).exists() for t in TAPS)

    def write(self, masks: PseudoMaskSet) -> None:
        for tap, mask in masks.masks.items():
            path = self.mask_path(tap, masks.patch_id)
            path.parent.mkdir(parents=True, exist_ok=True)
            SegmentationMask(mask).save_png(path)

    def read(self, patch_id: str, num_classes: int) -> PseudoMaskSet:
        masks = {}
        for tap in TAPS:
            path = self.mask_path(tap, patch_id)
            masks[tap] = SegmentationMask.load_png(path).labels
        return PseudoMaskSet(masks, patch_id, num_classes)


@dataclass
class GenerationReport:
    generated: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    quarantined: list[tuple[str, str]] = field(default_factory=list)


def generate_dataset(
    manifest: Manifest,
    model_or_checkpoint,
    out_dir: str | Path,
    config: GradCamConfig = GradCamConfig(),
    split: str = "train",
    records: Iterable | None = None,
) -> GenerationReport:
    """Write pseudo masks for every patch in a split; resumable.

    Patches whose three tap masks already exist are skipped. Per-patch
    failures land on a quarantine list (written to ``quarantine.jsonl``)
    without aborting the run. The index file is rebuilt at the end so
    reruns stay consistent.
    """
    model = _resolve_model(model_or_checkpoint)
    store = MaskStore(Path(out_dir))
    report = GenerationReport()
    chosen = list(records) if records is not None else manifest.split(split)
    indexed: list[dict] = []
    for rec in chosen:
        present = [k for k, v in enumerate(rec.label) if v]
        if store.has_all_taps(rec.patch_id):
            report.skipped.append(rec.patch_id)
        else:
            try:
                patch = Patch.from_image(manifest.resolve(rec), rec.patch_id)
                store.write(build_pseudo_masks(model, patch, present, config))
                report.generated.append(rec.patch_id)
            except Exception as exc:  # noqa: BLE001 - quarantine, keep going
                report.quarantined.append((rec.patch_id, f"{type(exc).__name__}: {exc}"))
                continue
        for tap in config.taps:
            indexed.append(
                {
                    "patch_id": rec.patch_id,
                    "tap": tap,
                    "path": str(store.mask_path(tap, rec.patch_id).relative_to(store.root)),
                    "classes_present": present,
                }
            )
    store.root.mkdir(parents=True, exist_ok=True)
    with open(store.root / "index.jsonl", "w") as fh:
        for row in indexed:
            fh.write(json.dumps(row) + "\n")
    if report.quarantined:
        with open(store.root / "quarantine.jsonl", "w") as fh:
            for patch_id, reason in report.quarantined:
                fh.write(json.dumps({"patch_id": patch_id, "reason": reason}) + "\n")
    return report
