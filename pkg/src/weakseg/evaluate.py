"""Dataset-level evaluation drivers for both phases.

Phase-1 evaluation scores the Grad-CAM pseudo masks of the classifier
(deepest tap by default, competitors chosen from the classifier's own
predictions) against ground-truth masks; segmenter evaluation scores
the gated argmax output. Both accumulate one confusion matrix across
the split and report the standard IoU family.
"""

from __future__ import annotations

import numpy as np

from .backbone import TissueClassifier, TissueSegmenter
from .datamodel import Manifest, Patch, SegmentationMask, TissueTaxonomy
from .ingest import eval_mask_path
from .inference import segment_patch
from .metrics import ConfusionMatrix, confusion, scores, white_background_mask
from .pseudomask import classify_patch, grad_cam, masks_from_cams, predicted_present


def _gt_valid_patch(manifest, rec, taxonomy):
    patch = Patch.from_image(manifest.resolve(rec), rec.patch_id)
    gt = SegmentationMask.load_png(eval_mask_path(manifest, rec))
    if taxonomy.background_policy == "white_threshold":
        gt = SegmentationMask(gt.labels, gt.valid & white_background_mask(patch))
    return patch, gt


def evaluate_phase1(
    manifest: Manifest,
    taxonomy: TissueTaxonomy,
    classifier: TissueClassifier,
    split: str = "test",
    tap: str = "bn7",
    use_predictions: bool = False,
    threshold: float = 0.5,
) -> tuple[dict, list[dict]]:
    """Score the classifier's pseudo masks on a pixel-annotated split.

    By default the per-pixel argmax competes over the classes actually
    present in the record's label (the usual protocol for judging CAM
    mask quality); ``use_predictions`` switches the competitor set to
    the classifier's own thresholded predictions.
    """
    c = taxonomy.num_classes
    total = ConfusionMatrix(np.zeros((c, c), dtype=np.int64))
    rows = []
    for rec in manifest.split(split):
        patch, gt = _gt_valid_patch(manifest, rec, taxonomy)
        if use_predictions:
            present = predicted_present(classify_patch(classifier, patch), threshold)
        else:
            present = tuple(k for k, v in enumerate(rec.label) if v)
        cams = grad_cam(classifier, patch, tap)
        labels = masks_from_cams(cams, present, (patch.height, patch.width))
        pred = SegmentationMask(labels, gt.valid)
        cm = confusion(gt, pred, c)
        total = total + cm
        rows.append({"patch_id": rec.patch_id, **scores(cm)})
    return scores(total), rows


def evaluate_segmenter(
    manifest: Manifest,
    taxonomy: TissueTaxonomy,
    segmenter: TissueSegmenter,
    classifier: TissueClassifier | None,
    split: str = "test",
    epsilon: float = 0.1,
    gate: bool = True,
) -> tuple[dict, list[dict]]:
    """Score gated segmenter output on a pixel-annotated split."""
    c = taxonomy.num_classes
    total = ConfusionMatrix(np.zeros((c, c), dtype=np.int64))
    rows = []
    for rec in manifest.split(split):
        patch, gt = _gt_valid_patch(manifest, rec, taxonomy)
        pred = segment_patch(
            patch, segmenter, classifier, taxonomy, epsilon, gate=gate and classifier is not None
        )
        pred = SegmentationMask(pred.labels, gt.valid)
        cm = confusion(gt, pred, c)
        total = total + cm
        rows.append({"patch_id": rec.patch_id, **scores(cm)})
    return scores(total), rows
