import numpy as np
import pytest
import torch

from weakseg.backbone import (
    TapSpec,
    TissueClassifier,
    TissueSegmenter,
    extract,
    load_checkpoint,
    save_checkpoint,
)
from weakseg.datamodel import TAPS, Patch, TissueTaxonomy
from weakseg.errors import ConfigError, ShapeError
from weakseg.pda import (
    ClassifierHead,
    apply_attention,
    class_activation_maps,
    dropout_deactivate,
    predict_logits,
)


def _patch(size=224, seed=0):
    rng = np.random.default_rng(seed)
    return Patch(rng.random((size, size, 3)), f"p{seed}")


class TestTapSpec:
    def test_default_strides(self):
        spec = TapSpec()
        assert tuple(spec.strides) == TAPS
        assert spec.spatial_size("bn7", (224, 224)) == (28, 28)

    def test_ordering_enforced(self):
        with pytest.raises(ConfigError):
            TapSpec({"b4_3": 8, "b5_2": 4, "bn7": 8})
        with pytest.raises(ConfigError):
            TapSpec({"bn7": 8, "b5_2": 8, "b4_3": 8})


class TestExtract:
    def test_bn7_shape_at_stride_8(self):
        model = TissueClassifier(4)
        bundle = extract(model, _patch(224))
        assert bundle.features["bn7"].shape[1:] == (28, 28)

    def test_tap_sizes_non_increasing(self):
        model = TissueClassifier(4)
        bundle = extract(model, _patch(224))
        sizes = [np.prod(bundle.features[t].shape[1:]) for t in TAPS]
        assert sizes[0] >= sizes[1] >= sizes[2]

    def test_deterministic_in_eval(self):
        model = TissueClassifier(4)
        patch = Patch(np.zeros((96, 96, 3)), "z")
        a = extract(model, patch)
        b = extract(model, patch)
        for tap in TAPS:
            assert np.array_equal(a.features[tap], b.features[tap])

    def test_too_small_input(self):
        model = TissueClassifier(4)
        with pytest.raises(ShapeError):
            extract(model, _patch(32))

    def test_translation_sanity(self):
        # shifting the input by one tap stride should shift deep features
        model = TissueClassifier(4, width=8)
        model.eval()
        rng = np.random.default_rng(0)
        base = rng.random((96 + 8, 96, 3))
        f_a = extract(model, Patch(base[:96], "a")).features["bn7"]
        f_b = extract(model, Patch(base[8:], "b")).features["bn7"]
        aligned = np.corrcoef(f_a[:, 1:, :].ravel(), f_b[:, :-1, :].ravel())[0, 1]
        unaligned = np.corrcoef(f_a.ravel(), f_b.ravel())[0, 1]
        assert aligned > unaligned

    def test_parameter_budget(self):
        n = sum(p.numel() for p in TissueClassifier(4).parameters())
        assert n <= 2_000_000


class TestClassifierForward:
    def test_mu_one_equals_explicit_composition(self):
        torch.manual_seed(0)
        model = TissueClassifier(4, width=8).eval()
        x = torch.rand(2, 3, 96, 96)
        out = model(x, mu=1.0)
        m = model.forward_taps(x)["bn7"]
        cams = torch.einsum("kc,bchw->bkhw", model.head.weight, m)
        beta = 1.0 * cams.amax(dim=(2, 3), keepdim=True)
        deact = torch.where(cams <= beta, cams, torch.zeros((), dtype=cams.dtype))
        attention = deact.sum(dim=1) / 4
        logits = model.head((attention.unsqueeze(1) * m).mean(dim=(2, 3)))
        assert torch.equal(out.logits, logits)
        assert torch.equal(out.cams, cams)

    def test_forward_matches_reference_ops(self):
        # torch forward path vs the numpy reference algebra
        torch.manual_seed(1)
        model = TissueClassifier(3, width=8).eval()
        x = torch.rand(1, 3, 96, 96)
        for mu in (1.0, 0.7, 0.65):
            out = model(x, mu=mu)
            feats = model.forward_taps(x)["bn7"][0].detach().numpy().astype(np.float64)
            head = ClassifierHead(
                model.head.weight.detach().numpy().astype(np.float64),
                model.head.bias.detach().numpy().astype(np.float64),
            )
            cams = class_activation_maps(feats, head)
            _, attention = dropout_deactivate(cams, mu)
            logits = predict_logits(apply_attention(feats, attention), head)
            assert np.allclose(out.logits[0].detach().numpy(), logits, atol=1e-4)

    def test_smaller_mu_never_raises_attention(self):
        torch.manual_seed(2)
        model = TissueClassifier(4, width=8).eval()
        x = torch.rand(1, 3, 96, 96)
        full = model(x, mu=1.0).attention
        dropped = model(x, mu=0.7).attention
        cams = model(x, mu=1.0).cams
        keep = cams <= 0.7 * cams.amax(dim=(2, 3), keepdim=True)
        # wherever all classes keep their values, attention agrees
        all_keep = keep.all(dim=1)
        assert torch.allclose(dropped[all_keep], full[all_keep])

    def test_invalid_mu(self):
        model = TissueClassifier(4)
        with pytest.raises(ValueError):
            model(torch.rand(1, 3, 96, 96), mu=0.0)


class TestSegmenterNet:
    def test_output_shape_matches_input(self):
        model = TissueSegmenter(5, width=8).eval()
        with torch.no_grad():
            out = model(torch.rand(2, 3, 96, 80))
        assert out.shape == (2, 5, 96, 80)

    def test_arbitrary_resolution(self):
        model = TissueSegmenter(3, width=8).eval()
        with torch.no_grad():
            out = model(torch.rand(1, 3, 250, 198))
        assert out.shape == (1, 3, 250, 198)


class TestAttentionSwitch:
    def test_vanilla_forward_is_plain_gap(self):
        torch.manual_seed(3)
        model = TissueClassifier(4, width=8, attention_enabled=False).eval()
        x = torch.rand(2, 3, 96, 96)
        out = model(x, mu=0.7)  # mu is irrelevant without the attention path
        m = model.forward_taps(x)["bn7"]
        assert torch.equal(out.logits, model.head(m.mean(dim=(2, 3))))
        assert out.attention is None

    def test_flag_survives_checkpoint(self, tmp_path):
        tax = TissueTaxonomy(("a", "b", "c", "d"))
        model = TissueClassifier(4, width=8, attention_enabled=False)
        save_checkpoint(model, tmp_path / "ck", tax)
        loaded, _, _ = load_checkpoint(tmp_path / "ck")
        assert loaded.attention_enabled is False


class TestPretrainedHook:
    def test_loads_matching_trunk_only(self, tmp_path):
        from weakseg.backbone import load_matching_parameters

        tax4 = TissueTaxonomy(("a", "b", "c", "d"))
        donor = TissueClassifier(4, width=8)
        save_checkpoint(donor, tmp_path / "donor", tax4)
        target = TissueClassifier(6, width=8)  # head differs: 6 classes
        loaded = load_matching_parameters(target, tmp_path / "donor")
        assert any(name.startswith("stem") for name in loaded)
        assert not any(name.startswith("head.") for name in loaded)
        for name in loaded:
            assert torch.equal(
                target.state_dict()[name], donor.state_dict()[name]
            )


class TestCheckpoint:
    def test_roundtrip_classifier(self, tmp_path):
        tax = TissueTaxonomy(("a", "b", "c", "d"))
        model = TissueClassifier(4, width=8)
        model.input_mean.copy_(torch.tensor([0.1, 0.2, 0.3]))
        save_checkpoint(model, tmp_path / "ck", tax, extra={"note": 1})
        loaded, tax2, extra = load_checkpoint(tmp_path / "ck")
        assert tax2 == tax and extra == {"note": 1}
        x = torch.rand(1, 3, 96, 96)
        model.eval()
        assert torch.equal(model(x).logits, loaded(x).logits)

    def test_one_blob_per_parameter(self, tmp_path):
        tax = TissueTaxonomy(("a", "b"))
        model = TissueSegmenter(2, width=8)
        save_checkpoint(model, tmp_path / "ck", tax)
        blobs = {p.stem for p in (tmp_path / "ck" / "params").glob("*.npy")}
        assert blobs == set(model.state_dict().keys())

    def test_metadata_declares_taps(self, tmp_path):
        import json

        tax = TissueTaxonomy(("a", "b", "c", "d"))
        save_checkpoint(TissueClassifier(4, width=8), tmp_path / "ck", tax)
        meta = json.loads((tmp_path / "ck" / "metadata.json").read_text())
        assert meta["tap_spec"] == {"b4_3": 8, "b5_2": 8, "bn7": 8}
        assert meta["num_classes"] == 4
