"""Shared fixtures: seeded generators, a tiny two-domain corpus and a narrow model config"""

import numpy as np
import pytest

from config import RUN_SLOW_TESTS
from models import SynthSpec, TrainConfig
from services.synthetic import generate_synthetic


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance runs (set DACL_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW_TESTS:
        return
    skip_slow = pytest.mark.skip(reason="set DACL_RUN_SLOW=1 to run desk-scale acceptance gates")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_spec():
    return SynthSpec(
        domains=2,
        vocab_size=40,
        shared_signal_words=3,
        flipped_words=5,
        labeled_per_domain=16,
        unlabeled_per_domain=24,
        valid_per_domain=8,
        test_per_domain=16,
        signal_on_rate=0.5,
        background_rate=0.05,
        seed=7,
    )


@pytest.fixture
def toy_dataset(toy_spec):
    return generate_synthetic(toy_spec)


@pytest.fixture
def small_config():
    return TrainConfig(
        alpha=0.1,
        gamma=0.1,
        lr=1e-3,
        batch_size=4,
        epochs=2,
        shared_dim=4,
        domain_dim=3,
        extractor_hidden=(8,),
        c1_hidden=6,
        c2_hidden=5,
        disc_hidden=5,
        seed=3,
    )
