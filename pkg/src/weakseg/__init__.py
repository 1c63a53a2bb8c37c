"""Weakly-supervised tissue semantic segmentation from patch-level labels."""

from .config import TrainConfig, paper_defaults
from .datamodel import (
    TAPS,
    CamStack,
    Manifest,
    ManifestRecord,
    Patch,
    PatchLabel,
    ProbabilityMap,
    PseudoMaskSet,
    SegmentationMask,
    TissueTaxonomy,
    validate_manifest,
)
from .inference import apply_gate, segment_patch, segment_slide
from .metrics import ConfusionMatrix, confusion, scores, white_background_mask
from .pda import (
    ClassifierHead,
    PdaSchedule,
    apply_attention,
    class_activation_maps,
    dropout_deactivate,
    predict_logits,
    step_schedule,
)
from .pseudomask import GradCamConfig, build_pseudo_masks, grad_cam, masks_from_cams
from .segmenter import MlpsLossConfig, mlps_loss
from .synthetic import make_synthetic
from .wsi import ProbabilityAccumulator, TileGrid, finalize, plan_tiles

__version__ = "0.1.0"

__all__ = [
    "TAPS",
    "CamStack",
    "ClassifierHead",
    "ConfusionMatrix",
    "GradCamConfig",
    "Manifest",
    "ManifestRecord",
    "MlpsLossConfig",
    "Patch",
    "PatchLabel",
    "PdaSchedule",
    "ProbabilityAccumulator",
    "ProbabilityMap",
    "PseudoMaskSet",
    "SegmentationMask",
    "TileGrid",
    "TissueTaxonomy",
    "TrainConfig",
    "apply_attention",
    "apply_gate",
    "build_pseudo_masks",
    "class_activation_maps",
    "confusion",
    "dropout_deactivate",
    "finalize",
    "grad_cam",
    "make_synthetic",
    "masks_from_cams",
    "mlps_loss",
    "paper_defaults",
    "plan_tiles",
    "predict_logits",
    "scores",
    "segment_patch",
    "segment_slide",
    "step_schedule",
    "validate_manifest",
    "white_background_mask",
]
