import warnings

import numpy as np
import pytest

from quadnet.data import SynthConfig, generate_synthetic, split
from quadnet.model import EmbeddingDimWarning, ModelConfig, init_model

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_dataset():
    """The acceptance fixture: 6 clusters in 32-d, 300 each, 600 outliers."""
    return generate_synthetic(SynthConfig(seed=2024))


@pytest.fixture(scope="session")
def fixture_splits(fixture_dataset):
    return split(fixture_dataset, (0.6, 0.2, 0.2), seed=7, stratified=True)


def make_model(**overrides):
    cfg = dict(input_dim=16, embed_dim=6, num_classes=5, backbone_hidden=[12], seed=0)
    cfg.update(overrides)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmbeddingDimWarning)
        return init_model(ModelConfig(**cfg))
