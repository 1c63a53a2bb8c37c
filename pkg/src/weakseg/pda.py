"""Progressive dropout attention: schedule and CAM algebra.

The classifier shares one linear head between prediction and CAM
construction. During training, each class's activation map is cut off
above a moving threshold beta = mu * max(map); the per-class survivors
are averaged into a single attention map that rescales the deep
features before pooling. The coefficient mu holds at 1 for a warmup
period, then decays geometrically toward a lower bound, so the
deactivated area grows as training progresses.

These are the reference (numpy) definitions; the torch classifier in
``backbone`` mirrors them inside its forward pass and is tested against
this module.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datamodel import CamStack
from .errors import ShapeError


@dataclass(frozen=True)
class PdaSchedule:
    """Decay state for the progressive dropout coefficient."""

    sigma: float = 0.985
    lower_bound: float = 0.65
    warmup_epochs: int = 3
    mu: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.sigma < 1.0):
            raise ValueError("sigma must lie in (0, 1)")
        if not (0.0 < self.lower_bound <= 1.0):
            raise ValueError("lower bound must lie in (0, 1]")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def step_schedule(sched: PdaSchedule, epoch: int) -> PdaSchedule:
    """Schedule state for the given epoch.

    Epochs below the warmup count keep mu at exactly 1 (no dropout);
    afterwards mu decays by sigma per epoch until it would cross the
    lower bound, where it clamps. Call once per epoch, in order.
    """
    if epoch < sched.warmup_epochs:
        return replace(sched, mu=1.0)
    decayed = sched.sigma * sched.mu
    return replace(sched, mu=decayed if decayed > sched.lower_bound else sched.lower_bound)


@dataclass(frozen=True)
class ClassifierHead:
    """Shared linear head: one weight row per class over deep channels."""

    weights: np.ndarray  # c x channels
    bias: np.ndarray  # c

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError("head weights must be c x channels")
        if b.shape != (w.shape[0],):
            raise ShapeError("head bias must have one entry per class")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("head parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0])


def class_activation_maps(features: np.ndarray, head: ClassifierHead, tap: str = "bn7") -> CamStack:
    """Per-class maps: weight each feature channel by the head row and sum."""
    m = np.asarray(features, dtype=np.float64)
    if m.ndim != 3:
        raise ShapeError(f"features must be channels x h x w, got {m.shape}")
    if m.shape[0] != head.weights.shape[1]:
        raise ShapeError(
            f"feature channels {m.shape[0]} != head width {head.weights.shape[1]}"
        )
    maps = np.einsum("kc,chw->khw", head.weights, m)
    return CamStack(maps, tap)


def dropout_deactivate(cams: CamStack, mu: float) -> tuple[CamStack, np.ndarray]:
    """Zero each class map above its cutoff and average the survivors.

    Cutoff per class is mu * max(map); values strictly above it drop to
    zero. At mu = 1 nothing exceeds its own maximum, so the maps pass
    through and the attention is the plain CAM mean.
    """
    if not (0.0 < mu <= 1.0):
        raise ValueError("mu must lie in (0, 1]")
    maps = cams.maps
    beta = mu * maps.max(axis=(1, 2), keepdims=True)
    deactivated = np.where(maps <= beta, maps, 0.0)
    attention = deactivated.sum(axis=0) / cams.num_classes
    return CamStack(deactivated, cams.tap), attention


def apply_attention(features: np.ndarray, attention: np.ndarray) -> np.ndarray:
    """Rescale every feature channel by the spatial attention map."""
    m = np.asarray(features, dtype=np.float64)
    a = np.asarray(attention, dtype=np.float64)
    if m.ndim != 3 or a.ndim != 2 or m.shape[1:] != a.shape:
        raise ShapeError(f"attention {a.shape} must match feature grid {m.shape[1:]}")
    return a[None, :, :] * m


def predict_logits(features: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Global-average-pool the (attended) features and apply the head."""
    m = np.asarray(features, dtype=np.float64)
    if m.ndim != 3:
        raise ShapeError(f"features must be channels x h x w, got {m.shape}")
    if m.shape[0] != head.weights.shape[1]:
        raise ShapeError(
            f"feature channels {m.shape[0]} != head width {head.weights.shape[1]}"
        )
    pooled = m.mean(axis=(1, 2))
    return head.weights @ pooled + head.bias


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
