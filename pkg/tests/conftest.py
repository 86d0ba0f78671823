from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from edgenids.dataset import stratified_split, synth_flows

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def synth_splits():
    """Balanced separable fixture, 80/10/10."""
    return stratified_split(synth_flows(6000, 0.5, seed=3), seed=3)


@pytest.fixture(scope="session")
def trained_ff2(synth_splits):
    from edgenids.models import build_ff
    from edgenids.trainer import TrainConfig, train
    tr, va, _ = synth_splits
    return train(build_ff(2, seed=0), tr, va, TrainConfig(epochs=10, seed=0)).net


@pytest.fixture(scope="session")
def trained_cnn(synth_splits):
    from edgenids.models import build_cnn_small
    from edgenids.trainer import TrainConfig, train
    tr, va, _ = synth_splits
    return train(build_cnn_small(8, 3, seed=0), tr, va, TrainConfig(epochs=6, seed=0)).net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
