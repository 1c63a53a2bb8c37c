"""Multi-layer pseudo-supervision loss and the phase-2 data pipeline.

The segmentation loss is a weighted sum of per-tap pixel cross-entropies
between the segmenter's logits and the pseudo masks from the three
classifier taps (all already upsampled to patch resolution). Geometric
augmentations are applied identically to the image and every mask;
photometric ones touch the image only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .datamodel import TAPS, PseudoMaskSet
from .errors import EmptyValidRegion, ShapeError

IGNORE_INDEX = -100


@dataclass(frozen=True)
class MlpsLossConfig:
    """Per-tap loss weights, ordered (b4_3, b5_2, bn7)."""

    lambda1: float = 0.2
    lambda2: float = 0.2
    lambda3: float = 0.6

    def __post_init__(self) -> None:
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if any(l < 0 for l in lams):
            raise ValueError("loss weights must be non-negative")
        if sum(lams) <= 0:
            raise ValueError("at least one loss weight must be positive")

    @property
    def per_tap(self) -> dict[str, float]:
        return {"b4_3": self.lambda1, "b5_2": self.lambda2, "bn7": self.lambda3}


def _tap_targets(
    pseudo: PseudoMaskSet | dict, shape: tuple[int, int], valid: np.ndarray | None
) -> dict[str, torch.Tensor]:
    masks = pseudo.masks if isinstance(pseudo, PseudoMaskSet) else pseudo
    targets = {}
    for tap in TAPS:
        mask = np.asarray(masks[tap], dtype=np.int64)
        if mask.shape != shape:
            raise ShapeError(f"mask at {tap} is {mask.shape}, logits are {shape}")
        t = torch.from_numpy(mask.copy())
        if valid is not None:
            t[~torch.from_numpy(np.asarray(valid, dtype=bool))] = IGNORE_INDEX
        targets[tap] = t
    return targets


def mlps_loss(
    logits: torch.Tensor,
    pseudo: PseudoMaskSet | dict,
    cfg: MlpsLossConfig = MlpsLossConfig(),
    valid: np.ndarray | None = None,
) -> torch.Tensor:
    """Weighted sum of per-tap mean pixel cross-entropies for one patch.

    ``logits`` is c x H x W; every mask must already be at H x W. Pixels
    outside ``valid`` are excluded from every term.
    """
    if logits.ndim != 3:
        raise ShapeError(f"logits must be c x H x W, got {tuple(logits.shape)}")
    shape = tuple(logits.shape[1:])
    if valid is not None and not np.asarray(valid, dtype=bool).any():
        raise EmptyValidRegion("no valid pixels to average over")
    targets = _tap_targets(pseudo, shape, valid)
    batched = logits.unsqueeze(0)
    total = logits.new_zeros(())
    for tap, lam in cfg.per_tap.items():
        if lam == 0.0:
            continue
        term = F.cross_entropy(
            batched, targets[tap].unsqueeze(0), ignore_index=IGNORE_INDEX
        )
        total = total + lam * term
    return total


def mlps_loss_batch(
    logits: torch.Tensor, targets: dict[str, torch.Tensor], cfg: MlpsLossConfig
) -> torch.Tensor:
    """Batched loss over B x c x H x W logits and per-tap B x H x W targets."""
    total = logits.new_zeros(())
    for tap, lam in cfg.per_tap.items():
        if lam == 0.0:
            continue
        total = total + lam * F.cross_entropy(
            logits, targets[tap], ignore_index=IGNORE_INDEX
        )
    return total


# ---------------------------------------------------------------------------
# Augmentation pipeline (pure functions of an explicit RNG)
# ---------------------------------------------------------------------------

def gaussian_blur(image: np.ndarray, sigma: float, kernel: int = 5) -> np.ndarray:
    """Separable Gaussian blur with edge padding; image is H x W x 3."""
    half = kernel // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(image, ((half, half), (0, 0), (0, 0)), mode="edge")
    rows = sum(k[i] * padded[i : i + image.shape[0]] for i in range(kernel))
    padded = np.pad(rows, ((0, 0), (half, half), (0, 0)), mode="edge")
    return sum(k[i] * padded[:, i : i + image.shape[1]] for i in range(kernel))


@dataclass(frozen=True)
class AugmentConfig:
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    blur_p: float = 0.0
    blur_kernel: int = 5
    blur_sigma: tuple[float, float] = (0.1, 1.0)


def augment_pair(
    rng: np.random.Generator,
    image: np.ndarray,
    masks: dict[str, np.ndarray],
    cfg: AugmentConfig,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Flip image+masks together; blur the image alone."""
    image = np.asarray(image)
    masks = {k: np.asarray(v) for k, v in masks.items()}
    if rng.random() < cfg.hflip_p:
        image = image[:, ::-1]
        masks = {k: v[:, ::-1] for k, v in masks.items()}
    if rng.random() < cfg.vflip_p:
        image = image[::-1, :]
        masks = {k: v[::-1, :] for k, v in masks.items()}
    if cfg.blur_p > 0 and rng.random() < cfg.blur_p:
        sigma = rng.uniform(*cfg.blur_sigma)
        image = np.clip(gaussian_blur(image, sigma, cfg.blur_kernel), 0.0, 1.0)
    return np.ascontiguousarray(image), {k: np.ascontiguousarray(v) for k, v in masks.items()}
