"""Command-line entry points for the full pipeline.

Every published constant is a flag with its published default, so
ablations are a flag away (``--no-pda``, ``--lambdas 0,0,1``,
``--no-gate``, ``--eps``...). Usage errors exit 2; runtime failures
exit 1 with a one-line structured message.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import load_checkpoint
from .config import TrainConfig, paper_defaults
from .datamodel import Patch, SegmentationMask, TissueTaxonomy, validate_manifest
from .errors import WeaksegError
from .evaluate import evaluate_phase1, evaluate_segmenter
from .inference import segment_patch, segment_slide, segment_tile_directory
from .ingest import load_luad_layout, synthesize_weak_from_pixel
from .pseudomask import GradCamConfig, generate_dataset
from .synthetic import make_synthetic
from .training import train_phase1, train_phase2


def _parse_lambdas(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("lambdas must be three comma-separated values")
    return tuple(parts)  # type: ignore[return-value]


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset root (LUAD-style layout)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dataset", choices=("luad", "bcss"), default="luad",
                   help="published default set to start from")
    p.add_argument("--epochs", type=int, default=None,
                   help="phase 1: 20 for luad, 40 for bcss; phase 2: 20")
    p.add_argument("--batch", type=int, default=None, dest="batch_size",
                   help="batch size (default: 20 phase 1, 16 phase 2)")
    p.add_argument("--lr", type=float, default=None, dest="lr0",
                   help="initial learning rate, poly decay (default: 1e-2 phase 1, 7e-2 phase 2)")
    p.add_argument("--width", type=int, default=None, help="model width multiplier")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON config file (flags override)")


def _resolve_config(args, phase: int) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.load(args.config)
    else:
        cfg = paper_defaults(args.dataset, phase)
    overrides = dict(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr0,
        width=args.width,
        seed=args.seed,
    )
    if phase == 1:
        overrides.update(
            sigma=args.sigma,
            lower_bound=args.lower_bound,
            warmup_epochs=args.warmup,
            pda_enabled=False if args.no_pda else None,
            attention_enabled=False if args.no_attention else None,
            constant_mu=args.constant_mu,
        )
    else:
        overrides.update(lambdas=args.lambdas)
    return cfg.with_overrides(**overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train", type=int, default=600)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--amp-lo", type=float, default=0.15,
                   help="texture contrast at each region's faint end")
    p.add_argument("--amp-hi", type=float, default=0.95,
                   help="texture contrast at each region's strong end")

    p = sub.add_parser("train-cls", help="phase 1: train the patch classifier")
    _add_common_train_flags(p)
    p.add_argument("--sigma", type=float, default=None,
                   help="dropout coefficient decay rate (default: 0.985)")
    p.add_argument("--lower-bound", type=float, default=None,
                   help="dropout coefficient floor (default: 0.65)")
    p.add_argument("--warmup", type=int, default=None,
                   help="epochs with dropout off (default: 3)")
    p.add_argument("--no-pda", action="store_true", help="pin the dropout coefficient to 1")
    p.add_argument("--constant-mu", type=float, default=None,
                   help="non-progressive dropout at a fixed coefficient (e.g. 0.7)")
    p.add_argument("--no-attention", action="store_true",
                   help="plain GAP classifier: drop the attention pathway entirely")

    p = sub.add_parser("gen-pseudo", help="write multi-layer pseudo masks from a classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="classifier checkpoint dir")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")

    p = sub.add_parser("train-seg", help="phase 2: train the segmenter on pseudo masks")
    _add_common_train_flags(p)
    p.add_argument("--pseudo", default=None, help="pseudo-mask store directory")
    p.add_argument("--lambdas", type=_parse_lambdas, default=None,
                   help="per-tap loss weights (default: 0.2,0.2,0.6)")
    p.add_argument("--fully-supervised", action="store_true",
                   help="train on ground-truth masks (train_mask/) instead of pseudo masks")

    p = sub.add_parser("infer-patch", help="segment a single patch image")
    p.add_argument("--image", required=True)
    p.add_argument("--seg-checkpoint", required=True)
    p.add_argument("--cls-checkpoint", default=None)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--out", required=True, help="output mask PNG")

    p = sub.add_parser("infer-wsi", help="segment a flat RGB slide by overlap tiling")
    p.add_argument("--slide", required=True,
                   help="flat RGB image, or a tile directory with origins.jsonl")
    p.add_argument("--seg-checkpoint", required=True)
    p.add_argument("--cls-checkpoint", default=None)
    p.add_argument("--tile", type=int, default=224)
    p.add_argument("--stride", type=int, default=112)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--save-probs", action="store_true", help="write per-class rasters")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="score predictions on a pixel-annotated split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("seg", "phase1"), default="seg")
    p.add_argument("--use-predictions", action="store_true",
                   help="phase1 mode: competitor classes from the classifier's own "
                        "predictions instead of the record labels")
    p.add_argument("--seg-checkpoint", default=None)
    p.add_argument("--cls-checkpoint", default=None)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth-bcss", help="synthesize weak labels from pixel-annotated ROIs")
    p.add_argument("--rois", required=True, help="directory of ROI images")
    p.add_argument("--masks", required=True, help="directory of matching mask PNGs")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=224)
    p.add_argument("--samples-per-roi", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-fraction", type=float, default=0.01)
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="fraction of ROIs whose crops form the val split")
    p.add_argument("--test-fraction", type=float, default=0.15,
                   help="fraction of ROIs whose crops form the test split")

    p = sub.add_parser("label-serve", help="run the labeling service (and UI, if built)")
    p.add_argument("--dataset", default=None, help="dataset root (single-session mode)")
    p.add_argument("--split", default="train")
    p.add_argument("--session", default="default")
    p.add_argument("--config", default=None,
                   help="JSON session config: {\"sessions\": [{id, dataset|manifest+taxonomy, split}]}")
    p.add_argument("--log-dir", required=True)
    p.add_argument("--static", default=None, help="UI bundle directory to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)

    p = sub.add_parser("validate", help="validate a dataset layout")
    p.add_argument("--data", required=True)

    return parser


def _cmd_make_synthetic(args) -> int:
    manifest, _ = make_synthetic(
        args.out,
        num_classes=args.classes,
        n_train=args.train,
        n_val=args.val,
        n_test=args.test,
        patch_size=args.size,
        seed=args.seed,
        amp_lo=args.amp_lo,
        amp_hi=args.amp_hi,
    )
    print(json.dumps({"out": args.out, "counts": manifest.split_counts}))
    return 0


def _cmd_train_cls(args) -> int:
    manifest, taxonomy = load_luad_layout(args.data)
    cfg = _resolve_config(args, phase=1)
    result = train_phase1(manifest, taxonomy, cfg, args.out)
    print(json.dumps({"checkpoint": str(result.checkpoint_dir)}))
    return 0


def _cmd_gen_pseudo(args) -> int:
    manifest, _ = load_luad_layout(args.data)
    report = generate_dataset(manifest, args.checkpoint, args.out, GradCamConfig(), args.split)
    print(
        json.dumps(
            {
                "generated": len(report.generated),
                "skipped": len(report.skipped),
                "quarantined": len(report.quarantined),
            }
        )
    )
    return 0


def _cmd_train_seg(args) -> int:
    manifest, taxonomy = load_luad_layout(args.data)
    cfg = _resolve_config(args, phase=2)
    if args.fully_supervised:
        root = Path(args.data)
        truth = {}
        for rec in manifest.split("train"):
            mask_path = root / "train_mask" / f"{rec.patch_id}.png"
            if not mask_path.exists():
                raise WeaksegError(f"no ground-truth mask {mask_path}")
            truth[rec.patch_id] = SegmentationMask.load_png(mask_path)
        result = train_phase2(manifest, taxonomy, cfg, args.out, truth_masks=truth)
    else:
        if not args.pseudo:
            raise WeaksegError("--pseudo is required unless --fully-supervised")
        result = train_phase2(manifest, taxonomy, cfg, args.out, pseudo_dir=args.pseudo)
    print(json.dumps({"checkpoint": str(result.checkpoint_dir)}))
    return 0


def _cmd_infer_patch(args) -> int:
    seg, taxonomy, _ = load_checkpoint(args.seg_checkpoint)
    cls_model = None
    if not args.no_gate:
        if not args.cls_checkpoint:
            raise WeaksegError("--cls-checkpoint is required unless --no-gate")
        cls_model, _, _ = load_checkpoint(args.cls_checkpoint)
    patch = Patch.from_image(args.image)
    mask = segment_patch(
        patch, seg, cls_model, taxonomy, args.eps, gate=not args.no_gate
    )
    mask.save_png(args.out)
    print(json.dumps({"out": args.out, "classes_present": sorted(set(mask.labels[mask.valid].tolist()))}))
    return 0


def _cmd_infer_wsi(args) -> int:
    seg, taxonomy, _ = load_checkpoint(args.seg_checkpoint)
    cls_model = None
    if not args.no_gate:
        if not args.cls_checkpoint:
            raise WeaksegError("--cls-checkpoint is required unless --no-gate")
        cls_model, _, _ = load_checkpoint(args.cls_checkpoint)
    if Path(args.slide).is_dir():
        mask, mean, report = segment_tile_directory(
            args.slide, seg, cls_model, taxonomy,
            epsilon=args.eps, gate=not args.no_gate,
        )
    else:
        slide = np.asarray(Image.open(args.slide).convert("RGB"), dtype=np.float64) / 255.0
        mask, mean, report = segment_slide(
            slide, seg, cls_model, taxonomy,
            tile=args.tile, stride=args.stride, epsilon=args.eps, gate=not args.no_gate,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mask.save_png(out / "mask.png")
    if args.save_probs:
        for k, name in enumerate(taxonomy.class_names):
            raster = np.round(mean.probs[k] * 255.0).astype(np.uint8)
            Image.fromarray(raster, "L").save(out / f"prob_{k}_{name}.png")
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return 0


def _cmd_evaluate(args) -> int:
    manifest, taxonomy = load_luad_layout(args.data)
    if args.mode == "phase1":
        if not args.cls_checkpoint:
            raise WeaksegError("phase1 evaluation needs --cls-checkpoint")
        cls_model, _, _ = load_checkpoint(args.cls_checkpoint)
        summary, rows = evaluate_phase1(
            manifest, taxonomy, cls_model, args.split,
            use_predictions=args.use_predictions,
        )
    else:
        if not args.seg_checkpoint:
            raise WeaksegError("seg evaluation needs --seg-checkpoint")
        seg, _, _ = load_checkpoint(args.seg_checkpoint)
        cls_model = None
        if not args.no_gate:
            if not args.cls_checkpoint:
                raise WeaksegError("gated evaluation needs --cls-checkpoint (or --no-gate)")
            cls_model, _, _ = load_checkpoint(args.cls_checkpoint)
        summary, rows = evaluate_segmenter(
            manifest, taxonomy, seg, cls_model, args.split, args.eps, gate=not args.no_gate
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "per_class": {
            name: summary["iou_per_class"][k]
            for k, name in enumerate(taxonomy.class_names)
        },
        "miou": summary["miou"],
        "fwiou": summary["fwiou"],
        "acc": summary["acc"],
        "pixels_evaluated": summary["pixels_evaluated"],
    }
    (out / "metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    with open(out / "per_patch.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_id", "miou", "fwiou", "acc", "pixels_evaluated"])
        for row in rows:
            writer.writerow(
                [row["patch_id"], row["miou"], row["fwiou"], row["acc"], row["pixels_evaluated"]]
            )
    print(json.dumps(report))
    return 0


def _cmd_synth_bcss(args) -> int:
    """Crop weak-labeled patches from pixel-annotated ROIs.

    ROIs are partitioned between splits (no ROI leaks across splits):
    train crops carry filename one-hot labels, val/test crops keep
    their pixel masks, mirroring the LUAD layout.
    """
    taxonomy = TissueTaxonomy.load(args.taxonomy)
    roi_dir, mask_dir, out = Path(args.rois), Path(args.masks), Path(args.out)
    (out / "train").mkdir(parents=True, exist_ok=True)
    for split in ("val", "test"):
        (out / split / "img").mkdir(parents=True, exist_ok=True)
        (out / split / "mask").mkdir(parents=True, exist_ok=True)
    taxonomy.save(out / "taxonomy.json")

    roi_paths = sorted(roi_dir.glob("*.png"))
    if not roi_paths:
        raise WeaksegError(f"no ROI images under {roi_dir}")
    order = np.random.default_rng(args.seed).permutation(len(roi_paths))
    n_val = int(round(args.val_fraction * len(roi_paths)))
    n_test = int(round(args.test_fraction * len(roi_paths)))
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "val" if rank < n_val else "test" if rank < n_val + n_test else "train"

    counts = {"train": 0, "val": 0, "test": 0}
    for i, roi_path in enumerate(roi_paths):
        mask_path = mask_dir / roi_path.name
        if not mask_path.exists():
            raise WeaksegError(f"no mask for roi {roi_path.name}")
        roi = np.asarray(Image.open(roi_path).convert("RGB"), dtype=np.float64) / 255.0
        mask = SegmentationMask.load_png(mask_path)
        crops = synthesize_weak_from_pixel(
            roi, mask, taxonomy.num_classes, args.patch_size,
            args.samples_per_roi, seed=args.seed + i,
            min_fraction=args.min_fraction, roi_id=roi_path.stem,
        )
        split = split_of[i]
        for crop in crops:
            if split == "train":
                bits = " ".join(str(v) for v in crop.label.to_list())
                crop.patch.save_image(out / "train" / f"{crop.patch.patch_id}-[{bits}].png")
            else:
                crop.patch.save_image(out / split / "img" / f"{crop.patch.patch_id}.png")
                crop.mask.save_png(out / split / "mask" / f"{crop.patch.patch_id}.png")
            counts[split] += 1
    print(json.dumps({"out": str(out), "patches": counts}))
    return 0


def _cmd_label_serve(args) -> int:
    import uvicorn

    from .service import create_app, session_from_dataset, session_from_manifest

    sessions = []
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        for entry in doc.get("sessions", []):
            if "dataset" in entry:
                sessions.append(
                    session_from_dataset(
                        entry["id"], entry["dataset"], args.log_dir,
                        entry.get("split", "train"),
                    )
                )
            else:
                sessions.append(
                    session_from_manifest(
                        entry["id"], entry["manifest"], entry["taxonomy"],
                        args.log_dir, entry.get("split"),
                    )
                )
    elif args.dataset:
        sessions.append(
            session_from_dataset(args.session, args.dataset, args.log_dir, args.split)
        )
    if not sessions:
        raise WeaksegError("label-serve needs --dataset or --config")
    app = create_app(sessions, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_validate(args) -> int:
    manifest, taxonomy = load_luad_layout(args.data)
    validate_manifest(manifest, taxonomy)
    print(json.dumps({"counts": manifest.split_counts, "classes": list(taxonomy.class_names)}))
    return 0


_COMMANDS = {
    "make-synthetic": _cmd_make_synthetic,
    "train-cls": _cmd_train_cls,
    "gen-pseudo": _cmd_gen_pseudo,
    "train-seg": _cmd_train_seg,
    "infer-patch": _cmd_infer_patch,
    "infer-wsi": _cmd_infer_wsi,
    "evaluate": _cmd_evaluate,
    "synth-bcss": _cmd_synth_bcss,
    "label-serve": _cmd_label_serve,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except WeaksegError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFound", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
