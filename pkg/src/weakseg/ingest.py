"""Dataset loaders and weak-label synthesis from pixel masks.

Two on-disk layouts are understood:

  LUAD-style::

      root/
        taxonomy.json
        train/<patch_id>-[1 0 0 1].png     # one-hot in filename, or
        train/labels.jsonl                  # {patch_id, label} sidecar
        train/<patch_id>.png
        val/img/*.png    val/mask/*.png
        test/img/*.png   test/mask/*.png

  BCSS-style (for weak-label synthesis)::

      root/rois/*.png + root/masks/*.png

Presence derivation from a pixel mask uses one rule everywhere: class k
is present iff it occupies at least ``min_fraction`` of the crop's
valid pixels (default 1%).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    Manifest,
    ManifestRecord,
    Patch,
    PatchLabel,
    SegmentationMask,
    TissueTaxonomy,
)
from .errors import EmptyLabel, LayoutError, RoiTooSmall

DEFAULT_MIN_FRACTION = 0.01

_FILENAME_LABEL = re.compile(r"^(?P<pid>.+?)-\[(?P<bits>[01](?:[ ,][01])*)\]$")


def presence_from_mask(
    labels: np.ndarray,
    num_classes: int,
    valid: np.ndarray | None = None,
    min_fraction: float = DEFAULT_MIN_FRACTION,
) -> np.ndarray:
    """One-hot presence vector: class fraction of valid pixels >= min_fraction."""
    labels = np.asarray(labels)
    if valid is None:
        valid = np.ones(labels.shape, dtype=bool)
    chosen = labels[valid]
    presence = np.zeros(num_classes, dtype=np.int64)
    if chosen.size == 0:
        return presence
    counts = np.bincount(chosen.ravel(), minlength=num_classes)[:num_classes]
    presence[counts / chosen.size >= min_fraction] = 1
    return presence


def parse_filename_label(stem: str) -> tuple[str, tuple[int, ...]] | None:
    """Split ``<patch_id>-[1 0 0 1]`` into id and one-hot bits, if present."""
    m = _FILENAME_LABEL.match(stem)
    if not m:
        return None
    bits = tuple(int(b) for b in re.split(r"[ ,]", m.group("bits")))
    return m.group("pid"), bits


def _train_records(root: Path, c: int) -> list[ManifestRecord]:
    train_dir = root / "train"
    if not train_dir.is_dir():
        raise LayoutError(f"missing train/ under {root}")
    sidecar: dict[str, tuple[int, ...]] = {}
    sidecar_path = train_dir / "labels.jsonl"
    if sidecar_path.exists():
        for line in sidecar_path.read_text().splitlines():
            if line.strip():
                doc = json.loads(line)
                sidecar[str(doc["patch_id"])] = tuple(int(v) for v in doc["label"])
    records = []
    for path in sorted(train_dir.glob("*.png")):
        parsed = parse_filename_label(path.stem)
        if parsed is not None:
            pid, bits = parsed
        elif path.stem in sidecar:
            pid, bits = path.stem, sidecar[path.stem]
        else:
            raise LayoutError(f"no label for training patch {path.name}")
        if len(bits) != c:
            raise LayoutError(f"{path.name}: label arity {len(bits)} != c={c}")
        if not any(bits):
            raise EmptyLabel(f"{path.name}: training label is all zero")
        records.append(
            ManifestRecord(patch_id=pid, path=str(path.relative_to(root)), split="train", label=bits)
        )
    return records


def _eval_records(root: Path, split: str, c: int, min_fraction: float) -> list[ManifestRecord]:
    img_dir = root / split / "img"
    mask_dir = root / split / "mask"
    if not img_dir.is_dir():
        return []
    if not mask_dir.is_dir():
        raise LayoutError(f"{split}/img exists without {split}/mask under {root}")
    records = []
    for path in sorted(img_dir.glob("*.png")):
        mask_path = mask_dir / path.name
        if not mask_path.exists():
            raise LayoutError(f"no mask for {split} patch {path.name}")
        mask = SegmentationMask.load_png(mask_path)
        if mask.labels[mask.valid].size and mask.labels[mask.valid].max() >= c:
            raise LayoutError(f"{mask_path.name}: class index >= c={c}")
        label = presence_from_mask(mask.labels, c, mask.valid, min_fraction)
        records.append(
            ManifestRecord(
                patch_id=f"{split}_{path.stem}",
                path=str(path.relative_to(root)),
                split=split,
                label=tuple(int(v) for v in label),
            )
        )
    return records


def load_luad_layout(
    root: str | Path,
    min_fraction: float = DEFAULT_MIN_FRACTION,
    patch_filter=None,
) -> tuple[Manifest, TissueTaxonomy]:
    """Manifest + taxonomy from a LUAD-style directory tree.

    ``patch_filter`` is an optional quality-control predicate on
    ``ManifestRecord``; records it rejects are dropped from the
    manifest (blurry/dirty-patch screening plugs in here).
    """
    root = Path(root)
    tax_path = root / "taxonomy.json"
    if not tax_path.exists():
        raise LayoutError(f"missing taxonomy.json under {root}")
    taxonomy = TissueTaxonomy.load(tax_path)
    c = taxonomy.num_classes
    records = _train_records(root, c)
    for split in ("val", "test"):
        records.extend(_eval_records(root, split, c, min_fraction))
    if patch_filter is not None:
        records = [rec for rec in records if patch_filter(rec)]
    if not records:
        raise LayoutError(f"no patches found under {root}")
    return Manifest(records, root=root), taxonomy


def eval_mask_path(manifest: Manifest, rec: ManifestRecord) -> Path:
    """Ground-truth mask path for a record, when the layout carries one.

    val/test masks sit in the split's ``mask/`` dir; training patches
    have them only in datasets that keep a ``train_mask/`` dir (the
    synthetic benchmark does, for scoring pseudo masks at the source).
    """
    img_path = manifest.resolve(rec)
    if rec.split == "train":
        return img_path.parent.parent / "train_mask" / f"{rec.patch_id}.png"
    return img_path.parent.parent / "mask" / img_path.name


@dataclass(frozen=True)
class WeakCrop:
    """One synthesized weakly-labeled crop plus its retained pixel mask."""

    patch: Patch
    label: PatchLabel
    mask: SegmentationMask


def synthesize_weak_from_pixel(
    roi: np.ndarray,
    mask: SegmentationMask,
    num_classes: int,
    patch_size: int,
    samples_per_roi: int,
    seed: int,
    min_fraction: float = DEFAULT_MIN_FRACTION,
    roi_id: str = "roi",
) -> list[WeakCrop]:
    """Random crops from a pixel-annotated ROI with derived one-hot labels.

    Crops whose presence vector comes out all zero (possible when almost
    every pixel is invalid) are discarded and redrawn a bounded number
    of times.
    """
    roi = np.asarray(roi, dtype=np.float64)
    if roi.ndim != 3 or roi.shape[2] != 3:
        raise ValueError("roi must be H x W x 3")
    if roi.shape[:2] != mask.labels.shape:
        raise ValueError("roi and mask shapes differ")
    h, w = roi.shape[:2]
    if h < patch_size or w < patch_size:
        raise RoiTooSmall(f"roi {h}x{w} smaller than patch size {patch_size}")
    rng = np.random.default_rng(seed)
    crops: list[WeakCrop] = []
    attempts = 0
    while len(crops) < samples_per_roi and attempts < samples_per_roi * 20:
        attempts += 1
        r = int(rng.integers(0, h - patch_size + 1))
        c = int(rng.integers(0, w - patch_size + 1))
        sub_labels = mask.labels[r : r + patch_size, c : c + patch_size]
        sub_valid = mask.valid[r : r + patch_size, c : c + patch_size]
        presence = presence_from_mask(sub_labels, num_classes, sub_valid, min_fraction)
        if not presence.any():
            continue
        idx = len(crops)
        crops.append(
            WeakCrop(
                patch=Patch(
                    roi[r : r + patch_size, c : c + patch_size],
                    patch_id=f"{roi_id}_{idx:05d}",
                    slide_id=roi_id,
                    origin=(r, c),
                ),
                label=PatchLabel(presence),
                mask=SegmentationMask(sub_labels, sub_valid),
            )
        )
    return crops
