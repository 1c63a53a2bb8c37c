"""Feature extractors with named taps, and checkpoint serialization.

Two compact default networks ship for desk-scale work:

  - ``TissueClassifier``: a dilated conv trunk at output stride 8
    exposing taps ``b4_3``/``b5_2``/``bn7`` (shallow to deep, all at the
    same grid like the wide-residual family it stands in for), a GAP +
    linear head, and the dropout-attention forward pass wired between
    the deep features and the head.
  - ``TissueSegmenter``: an encoder-decoder producing a c-channel logit
    map at input resolution.

Both are pluggable: anything with the same forward contract works.
Checkpoints are directories holding a ``metadata.json`` plus one ``.npy``
blob per parameter/buffer, keyed by state-dict name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .datamodel import TAPS, Patch, TissueTaxonomy
from .errors import ConfigError, ShapeError

MIN_INPUT_SIDE = 64

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TapSpec:
    """Declared taps and their strides, shallowest first."""

    strides: dict[str, int] = field(default_factory=lambda: {t: 8 for t in TAPS})

    def __post_init__(self) -> None:
        if tuple(self.strides) != TAPS:
            raise ConfigError(f"tap spec must declare exactly {TAPS} in order")
        vals = list(self.strides.values())
        if any(s < 1 for s in vals):
            raise ConfigError("tap strides must be positive")
        if any(a > b for a, b in zip(vals, vals[1:])):
            raise ConfigError("tap strides must be non-decreasing (bn7 deepest)")

    def spatial_size(self, tap: str, input_hw: tuple[int, int]) -> tuple[int, int]:
        s = self.strides[tap]
        return ((input_hw[0] + s - 1) // s, (input_hw[1] + s - 1) // s)


@dataclass(frozen=True)
class FeatureBundle:
    """Feature maps per tap for one patch (channels x h x w)."""

    features: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for tap, arr in self.features.items():
            arr = np.asarray(arr)
            if arr.ndim != 3:
                raise ShapeError(f"features at {tap} must be channels x h x w")
            if not np.isfinite(arr).all():
                raise ValueError(f"features at {tap} contain non-finite values")


def _conv_block(cin: int, cout: int, stride: int = 1, dilation: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ClassifierOutput:
    """Forward-pass artifacts: logits plus everything needed for CAMs."""

    __slots__ = ("logits", "taps", "cams", "attention")

    def __init__(self, logits, taps, cams, attention):
        self.logits = logits
        self.taps = taps
        self.cams = cams
        self.attention = attention


class TissueClassifier(nn.Module):
    """Multi-label patch classifier with dropout attention in the forward.

    The head weights double as the CAM weights: per class, the deep
    feature channels are combined by the head row, cut off above
    mu * max, averaged into an attention map, and multiplied back onto
    the features before global average pooling and the same head.
    """

    KIND = "classifier"

    def __init__(self, num_classes: int, width: int = 16, attention_enabled: bool = True):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("classifier needs at least 2 classes")
        w = width
        self.num_classes = num_classes
        self.width = width
        # False = plain GAP classifier (the no-attention ablation arm).
        self.attention_enabled = attention_enabled
        self.stem = nn.Sequential(
            _conv_block(3, w, stride=2),
            _conv_block(w, 2 * w, stride=2),
            _conv_block(2 * w, 3 * w, stride=2),
        )
        self.block4 = _conv_block(3 * w, 3 * w)
        self.block5 = _conv_block(3 * w, 4 * w)
        self.block6 = _conv_block(4 * w, 4 * w, dilation=2)
        self.block7 = _conv_block(4 * w, 4 * w)
        self.head = nn.Linear(4 * w, num_classes)
        # Input normalization; overwritten with dataset stats at train time.
        self.register_buffer("input_mean", torch.zeros(3))
        self.register_buffer("input_std", torch.ones(3))

    @property
    def tap_spec(self) -> TapSpec:
        return TapSpec({"b4_3": 8, "b5_2": 8, "bn7": 8})

    @property
    def tap_channels(self) -> dict[str, int]:
        w = self.width
        return {"b4_3": 3 * w, "b5_2": 4 * w, "bn7": 4 * w}

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.input_mean.view(1, 3, 1, 1)) / self.input_std.view(1, 3, 1, 1)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected B x 3 x H x W input, got {tuple(x.shape)}")
        if x.shape[2] < MIN_INPUT_SIDE or x.shape[3] < MIN_INPUT_SIDE:
            raise ShapeError(
                f"input {tuple(x.shape[2:])} below minimum {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
            )

    def forward_taps(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        self._check_input(x)
        h = self.stem(self.normalize(x))
        b4_3 = self.block4(h)
        b5_2 = self.block5(b4_3)
        h = self.block6(b5_2)
        bn7 = self.block7(h)
        return {"b4_3": b4_3, "b5_2": b5_2, "bn7": bn7}

    def forward(self, x: torch.Tensor, mu: float = 1.0) -> ClassifierOutput:
        if not (0.0 < mu <= 1.0):
            raise ValueError("mu must lie in (0, 1]")
        taps = self.forward_taps(x)
        m = taps["bn7"]
        cams = torch.einsum("kc,bchw->bkhw", self.head.weight, m)
        if not self.attention_enabled:
            logits = self.head(m.mean(dim=(2, 3)))
            return ClassifierOutput(logits, taps, cams, None)
        beta = mu * cams.amax(dim=(2, 3), keepdim=True)
        # Hard mask: gradients flow through kept values only.
        deactivated = torch.where(cams <= beta, cams, torch.zeros((), dtype=cams.dtype))
        attention = deactivated.sum(dim=1) / self.num_classes
        attended = attention.unsqueeze(1) * m
        logits = self.head(attended.mean(dim=(2, 3)))
        return ClassifierOutput(logits, taps, cams, attention)


def extract(model: TissueClassifier, patch: Patch) -> FeatureBundle:
    """Feature maps at every declared tap for one patch, in eval mode."""
    x = torch.from_numpy(np.ascontiguousarray(patch.pixels.transpose(2, 0, 1))).float()
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            taps = model.forward_taps(x.unsqueeze(0))
    finally:
        model.train(was_training)
    return FeatureBundle({t: taps[t][0].numpy() for t in TAPS})


class TissueSegmenter(nn.Module):
    """Encoder-decoder mapping an RGB patch to per-class logits at input size."""

    KIND = "segmenter"

    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("segmenter needs at least 2 classes")
        w = width
        self.num_classes = num_classes
        self.width = width
        self.enc1 = _conv_block(3, w, stride=2)
        self.enc2 = _conv_block(w, 2 * w, stride=2)
        self.enc3 = _conv_block(2 * w, 3 * w, stride=2)
        self.mid = _conv_block(3 * w, 3 * w, dilation=2)
        self.dec2 = _conv_block(3 * w + 2 * w, 2 * w)
        self.dec1 = _conv_block(2 * w + w, w)
        self.classifier = nn.Conv2d(w, num_classes, 1)
        self.register_buffer("input_mean", torch.zeros(3))
        self.register_buffer("input_std", torch.ones(3))

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.input_mean.view(1, 3, 1, 1)) / self.input_std.view(1, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected B x 3 x H x W input, got {tuple(x.shape)}")
        size = x.shape[2:]
        h1 = self.enc1(self.normalize(x))
        h2 = self.enc2(h1)
        h3 = self.mid(self.enc3(h2))
        up2 = F.interpolate(h3, size=h2.shape[2:], mode="bilinear", align_corners=False)
        d2 = self.dec2(torch.cat([up2, h2], dim=1))
        up1 = F.interpolate(d2, size=h1.shape[2:], mode="bilinear", align_corners=False)
        d1 = self.dec1(torch.cat([up1, h1], dim=1))
        logits = self.classifier(d1)
        return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def save_checkpoint(
    model: nn.Module,
    directory: str | Path,
    taxonomy: TissueTaxonomy,
    extra: dict | None = None,
) -> Path:
    """Write a model to a directory: metadata.json + one blob per tensor."""
    directory = Path(directory)
    params_dir = directory / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model.KIND,
        "num_classes": model.num_classes,
        "width": model.width,
        "classes": list(taxonomy.class_names),
        "background_policy": taxonomy.background_policy,
        "extra": extra or {},
    }
    if isinstance(model, TissueClassifier):
        meta["tap_spec"] = model.tap_spec.strides
        meta["tap_channels"] = model.tap_channels
        meta["attention_enabled"] = model.attention_enabled
    for name, tensor in model.state_dict().items():
        np.save(params_dir / f"{name}.npy", tensor.detach().cpu().numpy())
    (directory / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def load_matching_parameters(model: nn.Module, directory: str | Path) -> list[str]:
    """Initialize any parameters whose name and shape match a checkpoint.

    The pretrained-weights hook: partial loads are fine (e.g. trunk
    only), mismatched or missing names are silently skipped. Returns
    the names actually loaded.
    """
    directory = Path(directory)
    state = model.state_dict()
    loaded = []
    for blob in sorted((directory / "params").glob("*.npy")):
        name = blob.stem
        if name not in state:
            continue
        tensor = torch.from_numpy(np.load(blob))
        if tuple(tensor.shape) != tuple(state[name].shape):
            continue
        state[name] = tensor
        loaded.append(name)
    model.load_state_dict(state)
    return loaded


def load_checkpoint(directory: str | Path) -> tuple[nn.Module, TissueTaxonomy, dict]:
    """Rebuild a model (+ taxonomy, extra metadata) from a checkpoint dir."""
    directory = Path(directory)
    meta = json.loads((directory / "metadata.json").read_text())
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version in {directory}")
    taxonomy = TissueTaxonomy(
        tuple(meta["classes"]), meta.get("background_policy", "none")
    )
    kind = meta["kind"]
    if kind == "classifier":
        model: nn.Module = TissueClassifier(
            meta["num_classes"], meta["width"], meta.get("attention_enabled", True)
        )
    elif kind == "segmenter":
        model = TissueSegmenter(meta["num_classes"], meta["width"])
    else:
        raise ConfigError(f"unknown checkpoint kind {kind!r}")
    state = {}
    for blob in (directory / "params").glob("*.npy"):
        state[blob.stem] = torch.from_numpy(np.load(blob))
    model.load_state_dict(state)
    model.eval()
    return model, taxonomy, meta.get("extra", {})
