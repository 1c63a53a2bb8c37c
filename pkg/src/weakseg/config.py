"""Central training configuration with validated defaults.

``paper_defaults`` returns the published hyperparameters for each
dataset/phase pair; everything is overridable from the CLI or a JSON
config file, and every run echoes its resolved config to ``run.json``
next to its outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ConfigError

DATASETS = ("luad", "bcss")


@dataclass(frozen=True)
class TrainConfig:
    phase: int = 1
    epochs: int = 20
    batch_size: int = 20
    lr0: float = 1e-2
    lr_policy: str = "poly"
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # augmentation
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    blur_p: float = 0.0
    blur_kernel: int = 5
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    normalize: bool = True
    # dropout attention: the full model multiplies features by the
    # averaged deactivated CAMs; attention_enabled=False is the plain
    # GAP-classifier ablation arm, pda_enabled=False pins mu at 1, and
    # constant_mu runs non-progressive dropout at a fixed coefficient.
    attention_enabled: bool = True
    pda_enabled: bool = True
    constant_mu: float | None = None
    sigma: float = 0.985
    lower_bound: float = 0.65
    warmup_epochs: int = 3
    # phase-2 supervision weights (b4_3, b5_2, bn7)
    lambdas: tuple[float, float, float] = (0.2, 0.2, 0.6)
    # inference
    eps: float = 0.1
    tile: int = 224
    stride: int = 112
    # model / reproducibility
    width: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.phase not in (1, 2):
            raise ConfigError("phase must be 1 or 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        for name in ("hflip_p", "vflip_p", "blur_p"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1]")
        if len(self.lambdas) != 3 or any(l < 0 for l in self.lambdas) or sum(self.lambdas) <= 0:
            raise ConfigError("lambdas must be three non-negative weights with positive sum")
        if not (0.0 <= self.eps < 1.0):
            raise ConfigError("eps must lie in [0, 1)")
        if self.constant_mu is not None and not (0.0 < self.constant_mu <= 1.0):
            raise ConfigError("constant_mu must lie in (0, 1]")
        if self.stride > self.tile // 2:
            raise ConfigError("stride must not exceed half the tile size")
        object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
        object.__setattr__(self, "blur_sigma", tuple(float(s) for s in self.blur_sigma))

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        for key in ("lambdas", "blur_sigma"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def paper_defaults(dataset: str, phase: int) -> TrainConfig:
    """Published hyperparameters for a dataset/phase combination."""
    if dataset not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}")
    if phase == 1:
        return TrainConfig(
            phase=1,
            epochs=20 if dataset == "luad" else 40,
            batch_size=20,
            lr0=1e-2,
        )
    if phase == 2:
        return TrainConfig(phase=2, epochs=20, batch_size=16, lr0=7e-2, blur_p=0.5)
    raise ConfigError("phase must be 1 or 2")
