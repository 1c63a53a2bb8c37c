"""Training loops for both phases.

Phase 1 fits the multi-label classifier with dropout attention under a
multi-label soft-margin loss; phase 2 fits the segmenter against the
multi-layer pseudo masks. Both use SGD with momentum and a polynomial
learning-rate decay over total iterations, log one JSON line per epoch,
and write a checkpoint directory at the end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import TissueClassifier, TissueSegmenter, save_checkpoint
from .config import TrainConfig
from .datamodel import (
    TAPS,
    Manifest,
    SegmentationMask,
    TissueTaxonomy,
)
from .errors import ConfigError, MissingPseudoMask
from .metrics import white_background_mask
from .pda import PdaSchedule, step_schedule
from .pseudomask import MaskStore
from .segmenter import AugmentConfig, MlpsLossConfig, augment_pair, mlps_loss_batch

from PIL import Image


def poly_lr(lr0: float, iteration: int, total_iters: int, power: float = 0.9) -> float:
    """Polynomial decay: lr0 * (1 - iter/total)^power."""
    frac = min(iteration / max(total_iters, 1), 1.0)
    return lr0 * (1.0 - frac) ** power


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr * group.get("lr_scale", 1.0)


def _load_uint8(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def channel_stats(images: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over a list of H x W x 3 uint8 images."""
    n = 0
    s = np.zeros(3)
    ss = np.zeros(3)
    for img in images:
        x = img.reshape(-1, 3).astype(np.float64) / 255.0
        n += x.shape[0]
        s += x.sum(axis=0)
        ss += (x * x).sum(axis=0)
    mean = s / n
    var = np.maximum(ss / n - mean**2, 1e-8)
    return mean, np.sqrt(var)


@dataclass
class TrainResult:
    checkpoint_dir: Path
    logs: list[dict] = field(default_factory=list)


def _write_logs(out_dir: Path, logs: list[dict], name: str = "train_log.jsonl") -> None:
    with open(out_dir / name, "w") as fh:
        for row in logs:
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# Phase 1
# ---------------------------------------------------------------------------

def train_phase1(
    manifest: Manifest,
    taxonomy: TissueTaxonomy,
    config: TrainConfig,
    out_dir: str | Path,
    quiet: bool = False,
) -> TrainResult:
    """Fit the patch classifier on weak labels; returns checkpoint + logs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.split("train")
    if not records:
        raise ConfigError("manifest has no training split")
    c = taxonomy.num_classes
    for rec in records:
        if len(rec.label) != c:
            raise ConfigError(f"{rec.patch_id}: label arity {len(rec.label)} != c={c}")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    images = [_load_uint8(manifest.resolve(r)) for r in records]
    labels = np.asarray([r.label for r in records], dtype=np.float32)

    model = TissueClassifier(c, config.width, config.attention_enabled)
    if config.normalize:
        mean, std = channel_stats(images)
        model.input_mean.copy_(torch.from_numpy(mean).float())
        model.input_std.copy_(torch.from_numpy(std).float())
    # The head feeds both the prediction and the attention map, so early
    # logits are quadratic in its weights; a 10x head rate (standard for
    # CAM-style heads) keeps the cold start from stalling.
    trunk = [p for n, p in model.named_parameters() if not n.startswith("head.")]
    optimizer = torch.optim.SGD(
        [
            {"params": trunk},
            {"params": model.head.parameters(), "lr_scale": 10.0},
        ],
        lr=config.lr0,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    aug = AugmentConfig(hflip_p=config.hflip_p, vflip_p=config.vflip_p, blur_p=config.blur_p)
    sched = PdaSchedule(config.sigma, config.lower_bound, config.warmup_epochs)
    n = len(records)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_iters = steps_per_epoch * config.epochs

    logs: list[dict] = []
    iteration = 0
    model.train()
    for epoch in range(config.epochs):
        sched = step_schedule(sched, epoch)
        if config.constant_mu is not None:
            mu = 1.0 if epoch < config.warmup_epochs else config.constant_mu
        elif config.pda_enabled:
            mu = sched.mu
        else:
            mu = 1.0
        order = rng.permutation(n)
        epoch_loss = 0.0
        hits = np.zeros(c)
        exact = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = np.empty((len(idx), 3) + images[0].shape[:2], dtype=np.float32)
            for j, i in enumerate(idx):
                img, _ = augment_pair(rng, images[i].astype(np.float32) / 255.0, {}, aug)
                batch[j] = img.transpose(2, 0, 1)
            x = torch.from_numpy(batch)
            y = torch.from_numpy(labels[idx])
            _set_lr(optimizer, poly_lr(config.lr0, iteration, total_iters, config.poly_power))
            out = model(x, mu=mu)
            loss = F.multilabel_soft_margin_loss(out.logits, y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            iteration += 1
            epoch_loss += float(loss.detach()) * len(idx)
            pred = (torch.sigmoid(out.logits.detach()).numpy() > 0.5).astype(np.float32)
            hits += (pred == labels[idx]).sum(axis=0)
            exact += int((pred == labels[idx]).all(axis=1).sum())
        row = {
            "epoch": epoch,
            "loss": epoch_loss / n,
            "mu": mu,
            "acc_per_class": [float(h / n) for h in hits],
            "acc_exact": exact / n,
        }
        logs.append(row)
        if not quiet:
            print(
                f"phase1 epoch {epoch:3d}  loss {row['loss']:.4f}  mu {mu:.4f}  "
                f"acc {row['acc_exact']:.3f}"
            )

    ckpt_dir = out_dir / "classifier"
    save_checkpoint(
        model,
        ckpt_dir,
        taxonomy,
        extra={
            "schedule": {
                "sigma": sched.sigma,
                "lower_bound": sched.lower_bound,
                "warmup_epochs": sched.warmup_epochs,
                "mu": sched.mu,
            },
            "pda_enabled": config.pda_enabled,
            "attention_enabled": config.attention_enabled,
        },
    )
    _write_logs(out_dir, logs)
    config.save(out_dir / "run.json")
    return TrainResult(ckpt_dir, logs)


# ---------------------------------------------------------------------------
# Phase 2
# ---------------------------------------------------------------------------

def _truth_targets(mask: SegmentationMask) -> dict[str, np.ndarray]:
    return {tap: mask.labels for tap in TAPS}


def train_phase2(
    manifest: Manifest,
    taxonomy: TissueTaxonomy,
    config: TrainConfig,
    out_dir: str | Path,
    pseudo_dir: str | Path | None = None,
    truth_masks: dict[str, SegmentationMask] | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Fit the segmenter on pseudo masks (or ground truth for the
    fully-supervised baseline, fed identically at every tap)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.split("train")
    if not records:
        raise ConfigError("manifest has no training split")
    c = taxonomy.num_classes
    store = MaskStore(Path(pseudo_dir)) if pseudo_dir is not None else None
    if store is None and truth_masks is None:
        raise ConfigError("either a pseudo-mask store or truth masks are required")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    images: list[np.ndarray] = []
    targets: list[dict[str, np.ndarray]] = []
    valids: list[np.ndarray | None] = []
    for rec in records:
        img = _load_uint8(manifest.resolve(rec))
        if store is not None:
            if not store.has_all_taps(rec.patch_id):
                raise MissingPseudoMask(f"no pseudo masks for {rec.patch_id}")
            masks = store.read(rec.patch_id, c).masks
            valid = None
        else:
            if rec.patch_id not in truth_masks:
                raise MissingPseudoMask(f"no ground-truth mask for {rec.patch_id}")
            gt = truth_masks[rec.patch_id]
            masks = _truth_targets(gt)
            valid = None if gt.valid.all() else gt.valid
        images.append(img)
        targets.append({k: np.asarray(v) for k, v in masks.items()})
        valids.append(valid)

    model = TissueSegmenter(c, config.width)
    if config.normalize:
        mean, std = channel_stats(images)
        model.input_mean.copy_(torch.from_numpy(mean).float())
        model.input_std.copy_(torch.from_numpy(std).float())
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=config.lr0,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    loss_cfg = MlpsLossConfig(*config.lambdas)
    aug = AugmentConfig(
        hflip_p=config.hflip_p,
        vflip_p=config.vflip_p,
        blur_p=config.blur_p,
        blur_kernel=config.blur_kernel,
        blur_sigma=config.blur_sigma,
    )
    n = len(records)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_iters = steps_per_epoch * config.epochs

    logs: list[dict] = []
    iteration = 0
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xs = np.empty((len(idx), 3) + images[0].shape[:2], dtype=np.float32)
            ys = {tap: np.empty((len(idx),) + images[0].shape[:2], dtype=np.int64) for tap in TAPS}
            for j, i in enumerate(idx):
                masks_in = dict(targets[i])
                if valids[i] is not None:
                    masks_in["__valid"] = valids[i].astype(np.uint8)
                img, masks_out = augment_pair(
                    rng, images[i].astype(np.float32) / 255.0, masks_in, aug
                )
                xs[j] = img.transpose(2, 0, 1)
                vmask = masks_out.pop("__valid", None)
                for tap in TAPS:
                    t = masks_out[tap].astype(np.int64)
                    if vmask is not None:
                        t = np.where(vmask.astype(bool), t, -100)
                    ys[tap][j] = t
            x = torch.from_numpy(xs)
            y = {tap: torch.from_numpy(ys[tap]) for tap in TAPS}
            _set_lr(optimizer, poly_lr(config.lr0, iteration, total_iters, config.poly_power))
            logits = model(x)
            loss = mlps_loss_batch(logits, y, loss_cfg)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            iteration += 1
            epoch_loss += float(loss.detach()) * len(idx)
        row = {"epoch": epoch, "loss": epoch_loss / n}
        logs.append(row)
        if not quiet:
            print(f"phase2 epoch {epoch:3d}  loss {row['loss']:.4f}")

    ckpt_dir = out_dir / "segmenter"
    save_checkpoint(model, ckpt_dir, taxonomy, extra={"lambdas": list(config.lambdas)})
    _write_logs(out_dir, logs)
    config.save(out_dir / "run.json")
    return TrainResult(ckpt_dir, logs)


def validity_for_patch(patch, taxonomy: TissueTaxonomy) -> np.ndarray | None:
    """Validity mask implied by the taxonomy's background policy."""
    if taxonomy.background_policy == "white_threshold":
        return white_background_mask(patch)
    return None
