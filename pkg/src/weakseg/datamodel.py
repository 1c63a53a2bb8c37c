"""Canonical value types and dataset-manifest handling.

Every other module trades in these types. They are immutable after
construction (arrays are flagged non-writeable) and therefore safe to
share across worker processes or threads.

File formats owned here:
  - taxonomy JSON: ``{"classes": [...], "background_policy": "none"|"white_threshold"}``
  - manifest JSON-lines: one record per patch
    ``{patch_id, path, split, label: [0/1,...], slide_id, origin: [r, c]}``
  - mask PNG: single-channel 8-bit, class index per pixel, 255 = invalid
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .errors import (
    DuplicateId,
    LabelArityMismatch,
    LayoutError,
    MissingFile,
    ShapeError,
)

# Named intermediate layers of the reference classifier, shallowest first.
TAPS: tuple[str, str, str] = ("b4_3", "b5_2", "bn7")

# Stored-mask value marking pixels outside the validity mask.
INVALID_SENTINEL: int = 255

BACKGROUND_POLICIES: tuple[str, str] = ("none", "white_threshold")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TissueTaxonomy:
    """Ordered tissue-class vocabulary; the single source of channel order."""

    class_names: tuple[str, ...]
    background_policy: str = "none"

    def __post_init__(self) -> None:
        names = tuple(str(n) for n in self.class_names)
        object.__setattr__(self, "class_names", names)
        if len(names) < 2:
            raise ValueError("taxonomy needs at least 2 classes")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if any(not n for n in names):
            raise ValueError("class names must be non-empty")
        if self.background_policy not in BACKGROUND_POLICIES:
            raise ValueError(f"unknown background_policy {self.background_policy!r}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def to_json(self) -> str:
        return json.dumps(
            {"classes": list(self.class_names), "background_policy": self.background_policy}
        )

    @classmethod
    def from_json(cls, text: str) -> "TissueTaxonomy":
        doc = json.loads(text)
        return cls(tuple(doc["classes"]), doc.get("background_policy", "none"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TissueTaxonomy":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class Patch:
    """One RGB tile in [0,1] plus provenance within its slide."""

    pixels: np.ndarray  # H x W x 3 float
    patch_id: str
    slide_id: str = ""
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"patch pixels must be HxWx3, got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("patch pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", _freeze(px))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_image(
        cls, path: str | Path, patch_id: str | None = None, slide_id: str = "", origin=(0, 0)
    ) -> "Patch":
        path = Path(path)
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        return cls(arr, patch_id or path.stem, slide_id, origin)

    def save_image(self, path: str | Path) -> None:
        arr = np.round(self.pixels * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)


@dataclass(frozen=True)
class PatchLabel:
    """Per-class presence/absence vector in taxonomy order."""

    presence: np.ndarray  # length-c, values in {0,1}

    def __post_init__(self) -> None:
        vec = np.asarray(self.presence, dtype=np.int64)
        if vec.ndim != 1:
            raise ShapeError("presence must be a 1-D vector")
        if not np.isin(vec, (0, 1)).all():
            raise ValueError("presence entries must be 0 or 1")
        object.__setattr__(self, "presence", _freeze(vec))

    @property
    def num_classes(self) -> int:
        return int(self.presence.shape[0])

    @property
    def present_classes(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.presence))

    def to_list(self) -> list[int]:
        return [int(v) for v in self.presence]


@dataclass(frozen=True)
class CamStack:
    """Per-class activation maps read at one named tap layer."""

    maps: np.ndarray  # c x h x w
    tap: str

    def __post_init__(self) -> None:
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 3:
            raise ShapeError(f"cam stack must be c x h x w, got {maps.shape}")
        if not np.isfinite(maps).all():
            raise ValueError("cam stack must be finite")
        if self.tap not in TAPS:
            raise ValueError(f"unknown tap {self.tap!r}")
        object.__setattr__(self, "maps", _freeze(maps))

    @property
    def num_classes(self) -> int:
        return int(self.maps.shape[0])


@dataclass(frozen=True)
class PseudoMaskSet:
    """Integer label maps for one patch, one per tap, at patch resolution."""

    masks: Mapping[str, np.ndarray]
    patch_id: str
    num_classes: int

    def __post_init__(self) -> None:
        got = dict(self.masks)
        if set(got) != set(TAPS):
            raise ShapeError(f"pseudo mask set needs taps {TAPS}, got {sorted(got)}")
        shape = None
        clean: dict[str, np.ndarray] = {}
        for tap in TAPS:
            m = np.asarray(got[tap], dtype=np.int64)
            if m.ndim != 2:
                raise ShapeError(f"mask at {tap} must be 2-D")
            if shape is None:
                shape = m.shape
            elif m.shape != shape:
                raise ShapeError("all tap masks must share the patch resolution")
            if m.min() < 0 or m.max() >= self.num_classes:
                raise ValueError(f"mask at {tap} holds class indices outside [0, c)")
            clean[tap] = _freeze(m)
        object.__setattr__(self, "masks", clean)

    def check_support(self, presence) -> None:
        """Assert every mask only uses classes marked present.

        Generation enforces this upstream; this is the schema-level
        hook for re-checking stored masks against a presence vector.
        """
        allowed = set(int(k) for k in np.flatnonzero(np.asarray(presence)))
        for tap, mask in self.masks.items():
            extra = set(np.unique(mask).tolist()) - allowed
            if extra:
                raise ValueError(
                    f"mask at {tap} uses absent classes {sorted(extra)}"
                )


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-class per-pixel probabilities plus a validity mask."""

    probs: np.ndarray  # c x H x W in [0,1]
    valid: np.ndarray | None = None  # H x W bool; None = all valid

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ShapeError(f"probs must be c x H x W, got {probs.shape}")
        if probs.min() < 0.0 or probs.max() > 1.0 + 1e-9:
            raise ValueError("probabilities must lie in [0, 1]")
        valid = self.valid
        if valid is None:
            valid = np.ones(probs.shape[1:], dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != probs.shape[1:]:
            raise ShapeError("validity mask must match the spatial shape")
        object.__setattr__(self, "probs", _freeze(probs))
        object.__setattr__(self, "valid", _freeze(valid))

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class SegmentationMask:
    """Dense class-index map; labels are meaningful only where valid."""

    labels: np.ndarray  # H x W int
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ShapeError(f"labels must be H x W, got {labels.shape}")
        valid = self.valid
        if valid is None:
            valid = np.ones(labels.shape, dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != labels.shape:
            raise ShapeError("validity mask must match the label shape")
        if labels[valid].size and labels[valid].min() < 0:
            raise ValueError("valid labels must be non-negative")
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "valid", _freeze(valid))

    def save_png(self, path: str | Path) -> None:
        if self.labels[self.valid].size and self.labels[self.valid].max() >= INVALID_SENTINEL:
            raise ValueError("class index collides with the invalid sentinel")
        out = np.full(self.labels.shape, INVALID_SENTINEL, dtype=np.uint8)
        out[self.valid] = self.labels[self.valid].astype(np.uint8)
        Image.fromarray(out, mode="L").save(path)

    @classmethod
    def load_png(cls, path: str | Path) -> "SegmentationMask":
        arr = np.asarray(Image.open(path))
        if arr.ndim != 2:
            raise LayoutError(f"mask file {path} is not single-channel")
        valid = arr != INVALID_SENTINEL
        labels = np.where(valid, arr, 0).astype(np.int64)
        return cls(labels, valid)


@dataclass(frozen=True)
class ManifestRecord:
    """One line of a dataset manifest."""

    patch_id: str
    path: str
    split: str
    label: tuple[int, ...]
    slide_id: str = ""
    origin: tuple[int, int] = (0, 0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "patch_id": self.patch_id,
                "path": self.path,
                "split": self.split,
                "label": list(self.label),
                "slide_id": self.slide_id,
                "origin": list(self.origin),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ManifestRecord":
        doc = json.loads(text)
        return cls(
            patch_id=str(doc["patch_id"]),
            path=str(doc["path"]),
            split=str(doc.get("split", "train")),
            label=tuple(int(v) for v in doc["label"]),
            slide_id=str(doc.get("slide_id", "")),
            origin=tuple(doc.get("origin", (0, 0))),
        )


@dataclass
class Manifest:
    """A validated collection of patch records for one dataset."""

    records: list[ManifestRecord]
    root: Path = field(default_factory=Path)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    @property
    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.records:
            counts[rec.split] = counts.get(rec.split, 0) + 1
        return counts

    def resolve(self, rec: ManifestRecord) -> Path:
        p = Path(rec.path)
        return p if p.is_absolute() else self.root / p

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        records = [
            ManifestRecord.from_json(line)
            for line in path.read_text().splitlines()
            if line.strip()
        ]
        return cls(records, root=path.parent)


def validate_manifest(manifest: Manifest, taxonomy: TissueTaxonomy) -> Manifest:
    """Check a manifest against its taxonomy and the filesystem.

    Returns the manifest unchanged on success. Raises ``DuplicateId``,
    ``LabelArityMismatch`` or ``MissingFile`` on the first violation.
    """
    seen: set[str] = set()
    for rec in manifest.records:
        if rec.patch_id in seen:
            raise DuplicateId(f"patch_id {rec.patch_id!r} appears more than once")
        seen.add(rec.patch_id)
        if len(rec.label) != taxonomy.num_classes:
            raise LabelArityMismatch(
                f"{rec.patch_id}: label length {len(rec.label)} != c={taxonomy.num_classes}"
            )
        target = manifest.resolve(rec)
        if not target.exists():
            raise MissingFile(f"{rec.patch_id}: missing patch file {target}")
    return manifest
