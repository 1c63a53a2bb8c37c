import json

import numpy as np
import pytest
import torch

from weakseg.backbone import TissueClassifier, load_checkpoint
from weakseg.config import TrainConfig
from weakseg.datamodel import SegmentationMask
from weakseg.errors import MissingPseudoMask
from weakseg.pseudomask import generate_dataset
from weakseg.training import channel_stats, poly_lr, train_phase1, train_phase2


def _phase1_cfg(**kw):
    base = dict(phase=1, epochs=5, batch_size=8, lr0=1e-2, width=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def _phase2_cfg(**kw):
    base = dict(phase=2, epochs=4, batch_size=8, lr0=2e-2, width=8, seed=3, blur_p=0.5)
    base.update(kw)
    return TrainConfig(**base)


class TestPolyLr:
    def test_endpoints(self):
        assert poly_lr(1e-2, 0, 100) == 1e-2
        assert poly_lr(1e-2, 100, 100) == 0.0

    def test_decay_shape(self):
        assert poly_lr(1.0, 50, 100, power=0.9) == pytest.approx(0.5**0.9)


def test_channel_stats():
    imgs = [np.zeros((2, 2, 3), dtype=np.uint8), np.full((2, 2, 3), 255, dtype=np.uint8)]
    mean, std = channel_stats(imgs)
    assert np.allclose(mean, 0.5)
    assert np.allclose(std, 0.5)


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    root, manifest, taxonomy = tiny_dataset
    out = tmp_path_factory.mktemp("p1")
    result = train_phase1(manifest, taxonomy, _phase1_cfg(), out, quiet=True)
    return result, out, taxonomy


@pytest.fixture(scope="module")
def pseudo_store(tiny_dataset, tmp_path_factory):
    root, manifest, taxonomy = tiny_dataset
    torch.manual_seed(0)
    model = TissueClassifier(taxonomy.num_classes, width=8)
    out = tmp_path_factory.mktemp("masks")
    generate_dataset(manifest, model, out)
    return out


class TestPhase1:
    def test_loss_decreases(self, trained):
        result, _, _ = trained
        assert result.logs[-1]["loss"] < result.logs[0]["loss"]

    def test_warmup_mu_exactly_one(self, trained):
        result, _, _ = trained
        assert [row["mu"] for row in result.logs[:3]] == [1.0, 1.0, 1.0]
        assert result.logs[3]["mu"] == pytest.approx(0.985)

    def test_log_file_schema(self, trained):
        _, out, _ = trained
        rows = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert {"epoch", "loss", "mu", "acc_per_class", "acc_exact"} <= set(rows[0])
        assert len(rows[0]["acc_per_class"]) == 4

    def test_checkpoint_reloads(self, trained):
        result, _, taxonomy = trained
        model, tax, extra = load_checkpoint(result.checkpoint_dir)
        assert isinstance(model, TissueClassifier)
        assert tax == taxonomy
        assert extra["schedule"]["sigma"] == 0.985

    def test_run_config_echoed(self, trained):
        _, out, _ = trained
        assert TrainConfig.load(out / "run.json") == _phase1_cfg()

    def test_warmup_only_equals_pda_disabled(self, tiny_dataset, tmp_path):
        # mu pinned at 1 by warmup vs by the flag: identical trajectories
        root, manifest, taxonomy = tiny_dataset
        cfg_a = _phase1_cfg(epochs=3, warmup_epochs=10, pda_enabled=True)
        cfg_b = _phase1_cfg(epochs=3, warmup_epochs=10, pda_enabled=False)
        ra = train_phase1(manifest, taxonomy, cfg_a, tmp_path / "a", quiet=True)
        rb = train_phase1(manifest, taxonomy, cfg_b, tmp_path / "b", quiet=True)
        assert [r["loss"] for r in ra.logs] == [r["loss"] for r in rb.logs]


class TestPhase2:
    def test_loss_decreases(self, tiny_dataset, pseudo_store, tmp_path):
        root, manifest, taxonomy = tiny_dataset
        result = train_phase2(
            manifest, taxonomy, _phase2_cfg(), tmp_path, pseudo_dir=pseudo_store, quiet=True
        )
        assert result.logs[-1]["loss"] < result.logs[0]["loss"]

    def test_missing_pseudo_mask(self, tiny_dataset, tmp_path):
        root, manifest, taxonomy = tiny_dataset
        with pytest.raises(MissingPseudoMask):
            train_phase2(
                manifest, taxonomy, _phase2_cfg(), tmp_path, pseudo_dir=tmp_path / "empty"
            )

    def test_fully_supervised_mode(self, tiny_dataset, tmp_path):
        root, manifest, taxonomy = tiny_dataset
        truth = {
            rec.patch_id: SegmentationMask.load_png(root / "train_mask" / f"{rec.patch_id}.png")
            for rec in manifest.split("train")
        }
        result = train_phase2(
            manifest,
            taxonomy,
            _phase2_cfg(epochs=3, lambdas=(0.0, 0.0, 1.0)),
            tmp_path,
            truth_masks=truth,
            quiet=True,
        )
        assert result.logs[-1]["loss"] < result.logs[0]["loss"]

    def test_single_layer_ablation_config(self, tiny_dataset, pseudo_store, tmp_path):
        root, manifest, taxonomy = tiny_dataset
        cfg = _phase2_cfg(epochs=1, lambdas=(0.0, 0.0, 1.0))
        result = train_phase2(manifest, taxonomy, cfg, tmp_path, pseudo_dir=pseudo_store, quiet=True)
        assert TrainConfig.load(tmp_path / "run.json").lambdas == (0.0, 0.0, 1.0)
