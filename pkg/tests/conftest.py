import numpy as np
import pytest

from weakseg.synthetic import make_synthetic


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic dataset shared by trainer/CLI/service tests."""
    root = tmp_path_factory.mktemp("tinyset")
    manifest, taxonomy = make_synthetic(
        root, num_classes=4, n_train=24, n_val=0, n_test=6, patch_size=96, seed=11
    )
    return root, manifest, taxonomy


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
