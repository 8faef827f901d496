"""
Desk-scale benchmark gates on the seeded polarity-flip corpus.

These train for real and take minutes; they only run with DACL_RUN_SLOW=1.
"""

import time

import numpy as np
import pytest

from models import SweepParameter, SweepSpec, SynthSpec, TrainConfig
from services import evaluation
from services.synthetic import generate_synthetic
from services.trainer import train

SEEDS = (0, 1, 2, 3, 4)

# Reduced network for the gates: the default 1000-500 extractors (about 4.3M
# parameters) cannot train five seeds per arm inside the 10-minute budget.
GATE_NETWORK = dict(
    lr=1e-3,
    batch_size=8,
    epochs=30,
    extractor_hidden=(64,),
    shared_dim=32,
    domain_dim=16,
    c1_hidden=32,
    c2_hidden=16,
    disc_hidden=32,
)
# Half the default shared signal, so flipped domain words carry most of the label
GATE_SHARED_SIGNAL_WORDS = 5

pytestmark = pytest.mark.slow


def _benchmark(seed: int, domains: int = 3):
    spec = SynthSpec(
        domains=domains,
        vocab_size=500,
        shared_signal_words=GATE_SHARED_SIGNAL_WORDS,
        labeled_per_domain=100,
        unlabeled_per_domain=1000,
        seed=seed,
    )
    return generate_synthetic(spec)


def _config(seed: int, **update) -> TrainConfig:
    values = dict(GATE_NETWORK, seed=seed)
    values.update(update)
    return TrainConfig(**values)


def test_full_model_beats_shared_baseline():
    started = time.perf_counter()
    dacl, baseline = [], []
    for seed in SEEDS:
        dataset = _benchmark(seed)
        dacl.append(evaluation.run_mdtc(dataset, _config(seed)).report.average)
        baseline.append(evaluation.run_baseline(dataset, _config(seed)).report.average)
    assert np.mean(dacl) - np.mean(baseline) >= 0.03
    assert time.perf_counter() - started < 600


def test_ablation_ordering():
    arms = {"dacl": [], "dacl-no-d": [], "dacl-no-c2": []}
    for seed in SEEDS:
        outcomes = evaluation.run_ablation(_benchmark(seed), _config(seed), threads=3)
        for arm, outcome in outcomes.items():
            arms[arm].append(outcome.report.average)
    full = np.mean(arms["dacl"])
    assert full >= np.mean(arms["dacl-no-d"])
    assert full >= np.mean(arms["dacl-no-c2"])


def test_adaptation_matches_pooled_source_baseline():
    adapted, pooled = [], []
    for seed in SEEDS:
        dataset = _benchmark(seed, domains=4)
        adapted.append(evaluation.run_uda(dataset, 3, _config(seed)).report.average)
        pooled.append(evaluation.run_uda_baseline(dataset, 3, _config(seed)).average)
    assert np.mean(adapted) >= np.mean(pooled)


def test_training_lifts_validation_accuracy():
    dataset = _benchmark(0)
    result = train(dataset, _config(0))
    assert result.history[0].epoch == 0
    final = result.history[-1].valid_accuracy
    assert final >= result.history[0].valid_accuracy + 0.20
    assert all(np.isfinite(v) for report in result.reports for v in report.losses.model_dump().values() if v is not None)


def test_large_separation_weight_hurts():
    spec = SweepSpec(parameter=SweepParameter.ALPHA, values=[0.1, 10.0])
    small, large = evaluation.run_sweep(_benchmark(0), spec, _config(0), threads=2)
    assert small.average >= large.average


def test_identical_manifests_give_identical_reports():
    dataset = _benchmark(2)
    first = evaluation.run_mdtc(dataset, _config(2, epochs=5)).report
    second = evaluation.run_mdtc(dataset, _config(2, epochs=5)).report
    assert first.model_dump_json() == second.model_dump_json()
