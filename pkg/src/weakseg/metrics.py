"""Segmentation evaluation: per-class IoU, MIoU, FwIoU and pixel accuracy.

All statistics derive from a single c x c confusion matrix (rows = ground
truth, columns = prediction) counted over pixels where BOTH validity
masks are true. Confusion matrices add, so per-patch matrices can be
accumulated in parallel and merged by elementwise sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datamodel import Patch, SegmentationMask
from .errors import (
    EmptyEvaluation,
    EmptyEvaluationWarning,
    ShapeError,
    TaxonomyMismatch,
)

# Near-white exclusion cutoff on the min RGB channel (see white_background_mask).
DEFAULT_WHITE_THRESHOLD = 0.85


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # c x c non-negative ints

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {counts.shape}")
        if counts.min() < 0:
            raise ValueError("confusion counts must be non-negative")
        counts = np.ascontiguousarray(counts)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise TaxonomyMismatch("cannot merge confusion matrices of different arity")
        return ConfusionMatrix(self.counts + other.counts)


def confusion(
    gt: SegmentationMask, pred: SegmentationMask, num_classes: int
) -> ConfusionMatrix:
    """Count (ground truth, prediction) pairs over jointly valid pixels."""
    if gt.labels.shape != pred.labels.shape:
        raise ShapeError(
            f"mask shapes differ: {gt.labels.shape} vs {pred.labels.shape}"
        )
    both = gt.valid & pred.valid
    g = gt.labels[both]
    p = pred.labels[both]
    if g.size == 0:
        warnings.warn("no jointly valid pixels to evaluate", EmptyEvaluationWarning)
        return ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.int64))
    if g.max() >= num_classes or p.max() >= num_classes:
        raise TaxonomyMismatch(
            f"mask holds class indices >= c={num_classes}; taxonomies disagree"
        )
    flat = num_classes * g + p
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def scores(cm: ConfusionMatrix) -> dict:
    """IoU per class, MIoU, FwIoU and pixel accuracy from one matrix.

    Classes absent from both ground truth and prediction get NaN IoU and
    are skipped by the MIoU mean; FwIoU weights by ground-truth pixel
    frequency so absent-in-gt classes contribute zero weight.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyEvaluation("confusion matrix is empty")
    diag = np.diag(counts)
    gt_per_class = counts.sum(axis=1)
    pred_per_class = counts.sum(axis=0)
    union = gt_per_class + pred_per_class - diag
    present = union > 0

    iou = np.full(cm.num_classes, np.nan)
    iou[present] = diag[present] / union[present]

    miou = float(iou[present].mean())
    freq = gt_per_class / total
    fwiou = float(np.sum(freq[present] * iou[present]))
    acc = float(diag.sum() / total)

    return {
        "iou_per_class": [None if not present[k] else float(iou[k]) for k in range(cm.num_classes)],
        "miou": miou,
        "fwiou": fwiou,
        "acc": acc,
        "pixels_evaluated": int(total),
    }


def white_background_mask(
    patch: Patch, threshold: float = DEFAULT_WHITE_THRESHOLD
) -> np.ndarray:
    """Validity mask excluding near-white pixels.

    A pixel is invalid when min(R, G, B) > threshold, i.e. all channels
    are bright. Returns an H x W boolean array, true = valid tissue.
    """
    return ~(patch.pixels.min(axis=2) > threshold)
