import pytest

from weakseg.config import TrainConfig, paper_defaults
from weakseg.errors import ConfigError


class TestPaperDefaults:
    def test_luad_phase1(self):
        cfg = paper_defaults("luad", 1)
        assert (cfg.epochs, cfg.lr0, cfg.batch_size) == (20, 1e-2, 20)
        assert (cfg.sigma, cfg.lower_bound, cfg.warmup_epochs) == (0.985, 0.65, 3)

    def test_bcss_phase1_epochs(self):
        assert paper_defaults("bcss", 1).epochs == 40

    def test_phase2(self):
        cfg = paper_defaults("luad", 2)
        assert (cfg.epochs, cfg.lr0) == (20, 7e-2)
        assert cfg.lambdas == (0.2, 0.2, 0.6)
        assert cfg.blur_p == 0.5

    def test_shared_constants(self):
        cfg = paper_defaults("luad", 1)
        assert cfg.eps == 0.1
        assert (cfg.tile, cfg.stride) == (224, 112)
        assert cfg.poly_power == 0.9

    def test_unknown_dataset(self):
        with pytest.raises(ConfigError):
            paper_defaults("camelyon", 1)


class TestValidation:
    def test_bad_values(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr0=-1)
        with pytest.raises(ConfigError):
            TrainConfig(hflip_p=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(lambdas=(0, 0, 0))
        with pytest.raises(ConfigError):
            TrainConfig(tile=224, stride=150)

    def test_overrides_skip_none(self):
        cfg = paper_defaults("luad", 1).with_overrides(epochs=None, lr0=5e-3)
        assert cfg.epochs == 20 and cfg.lr0 == 5e-3


def test_roundtrip_through_file(tmp_path):
    cfg = paper_defaults("bcss", 2).with_overrides(seed=42, lambdas=(0.1, 0.1, 0.8))
    cfg.save(tmp_path / "run.json")
    assert TrainConfig.load(tmp_path / "run.json") == cfg
