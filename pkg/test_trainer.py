"""
Tests for minibatch sampling, the L/A/R steps and the training loop
"""

import csv
import logging
import math

import numpy as np
import pytest

from errors import ConfigurationError, NumericalAbort
from models import AblationEnum, HyperParams, LossBundle, StepReport
from services import trainer as trainer_module
from services.autodiff import Tape
from services.data import DomainPools, MultiDomainDataset, labels_of, to_dense_batch
from services.evaluation import uda_dataset
from services.losses import classification_loss
from services.network import GROUP_C1, GROUP_C2, GROUP_DISC, GROUP_DOMAIN, GROUP_SHARED, classify, extract, init_params
from services.trainer import (
    Batches,
    DaclTrainer,
    LabeledBatch,
    MinibatchStream,
    PoolSampler,
    UnlabeledBatch,
    train,
)

EXTRACTORS = (GROUP_SHARED, GROUP_DOMAIN)
OPPONENTS = (GROUP_C1, GROUP_C2, GROUP_DISC)


def _full_batches(dataset: MultiDomainDataset) -> Batches:
    labeled = []
    unlabeled = []
    for m, pools in enumerate(dataset.domains):
        labeled.append(LabeledBatch(m, to_dense_batch(pools.labeled, dataset.vocab_size), labels_of(pools.labeled)))
        unlabeled.append(UnlabeledBatch(m, to_dense_batch(pools.unlabeled, dataset.vocab_size)))
    return Batches(labeled, unlabeled)


def _group_snapshot(params):
    return {name: [array.copy() for array in arrays] for name, arrays in params.groups().items()}


def _unchanged(before, params, groups):
    after = params.groups()
    return all(
        all(np.array_equal(a, b) for a, b in zip(before[name], after[name]))
        for name in groups
        if name in before
    )


def _changed(before, params, group):
    return any(not np.array_equal(a, b) for a, b in zip(before[group], params.groups()[group]))


# ── Sampling ────────────────────────────────────────────


def test_sampler_covers_pool_once_per_epoch():
    sampler = PoolSampler(16, 4, np.random.default_rng(0))
    drawn = np.concatenate([sampler.next() for _ in range(4)])
    assert sorted(drawn.tolist()) == list(range(16))
    assert sampler.reshuffles == 0
    sampler.next()
    assert sampler.reshuffles == 1


def test_sampler_wraps_small_pools():
    sampler = PoolSampler(3, 8, np.random.default_rng(0))
    batch = sampler.next()
    assert len(batch) == 8
    assert set(batch.tolist()) == {0, 1, 2}


def test_batches_have_one_per_domain(toy_spec):
    from services.synthetic import generate_synthetic

    dataset = generate_synthetic(toy_spec.model_copy(update={"domains": 3}))
    stream = MinibatchStream(dataset, batch_size=8, seed=0)
    batches = stream.sample_batches()
    assert [b.domain for b in batches.labeled] == [0, 1, 2]
    assert [b.domain for b in batches.unlabeled] == [0, 1, 2]
    assert all(b.x.shape == (8, dataset.vocab_size) for b in batches.labeled + batches.unlabeled)
    assert all(b.y.shape == (8,) for b in batches.labeled)


def test_same_seed_same_batches(toy_dataset):
    first = MinibatchStream(toy_dataset, 4, seed=5)
    second = MinibatchStream(toy_dataset, 4, seed=5)
    for _ in range(6):
        a, b = first.sample_batches(), second.sample_batches()
        for x, y in zip(a.labeled + a.unlabeled, b.labeled + b.unlabeled):
            np.testing.assert_array_equal(x.x, y.x)


def test_steps_per_epoch_follows_largest_labeled_pool(toy_dataset):
    stream = MinibatchStream(toy_dataset, 5, seed=0)
    assert stream.steps_per_epoch == math.ceil(16 / 5)


def test_empty_labeled_pool_is_a_configuration_error(toy_dataset):
    domains = list(toy_dataset.domains)
    domains[1] = DomainPools(domains[1].name, [], domains[1].unlabeled)
    with pytest.raises(ConfigurationError):
        MinibatchStream(MultiDomainDataset(toy_dataset.vocab_size, domains), 4, seed=0)


def test_empty_unlabeled_pool_is_skipped_with_warning(toy_dataset, caplog):
    domains = list(toy_dataset.domains)
    domains[0] = DomainPools(domains[0].name, domains[0].labeled, [])
    with caplog.at_level(logging.WARNING):
        stream = MinibatchStream(MultiDomainDataset(toy_dataset.vocab_size, domains), 4, seed=0)
    assert "no unlabeled pool" in caplog.text
    assert [b.domain for b in stream.sample_batches().unlabeled] == [1]


def test_label_reads_are_counted(toy_dataset):
    stream = MinibatchStream(toy_dataset, 4, seed=0, unlabeled_only={1})
    for _ in range(3):
        stream.sample_batches()
    assert stream.label_reads[0] == 12
    assert stream.label_reads.get(1, 0) == 0


# ── Step isolation ──────────────────────────────────────


def test_steps_touch_only_their_groups(toy_dataset, small_config):
    params = init_params(small_config, toy_dataset.vocab_size, toy_dataset.num_domains)
    trainer = DaclTrainer(params, small_config)
    stream = MinibatchStream(toy_dataset, small_config.batch_size, small_config.seed)
    for _ in range(50):
        batches = stream.sample_batches()

        before = _group_snapshot(params)
        trainer.l_step(batches)
        assert _unchanged(before, params, (GROUP_DISC,))

        before = _group_snapshot(params)
        trainer.a_step(batches)
        assert _unchanged(before, params, EXTRACTORS)

        before = _group_snapshot(params)
        trainer.r_step(batches)
        assert _unchanged(before, params, OPPONENTS)


def test_each_step_updates_its_groups(toy_dataset, small_config):
    params = init_params(small_config, toy_dataset.vocab_size, toy_dataset.num_domains)
    trainer = DaclTrainer(params, small_config)
    batches = _full_batches(toy_dataset)

    before = _group_snapshot(params)
    trainer.l_step(batches)
    assert all(_changed(before, params, g) for g in (GROUP_SHARED, GROUP_DOMAIN, GROUP_C1, GROUP_C2))

    before = _group_snapshot(params)
    trainer.a_step(batches)
    assert all(_changed(before, params, g) for g in (GROUP_C1, GROUP_C2, GROUP_DISC))

    before = _group_snapshot(params)
    trainer.r_step(batches)
    assert all(_changed(before, params, g) for g in EXTRACTORS)


def test_separate_adam_state_per_step_and_group(toy_dataset, small_config):
    params = init_params(small_config, toy_dataset.vocab_size, toy_dataset.num_domains)
    trainer = DaclTrainer(params, small_config)
    batches = _full_batches(toy_dataset)
    trainer.l_step(batches)
    trainer.a_step(batches)
    trainer.r_step(batches)
    assert ("l", GROUP_C1) in trainer._adam and ("a", GROUP_C1) in trainer._adam
    assert trainer._adam[("l", GROUP_C1)] is not trainer._adam[("a", GROUP_C1)]
    assert ("r", GROUP_SHARED) in trainer._adam and ("l", GROUP_SHARED) in trainer._adam


# ── Step objectives ─────────────────────────────────────


def test_l_step_descends(toy_dataset, small_config):
    config = small_config.model_copy(update={"lr": 1e-3})
    trainer = DaclTrainer(init_params(config, toy_dataset.vocab_size, 2), config)
    batches = _full_batches(toy_dataset)

    def objective(bundle: LossBundle) -> float:
        return bundle.lc1 + bundle.lc2 + config.alpha * bundle.lsep

    first = objective(trainer.l_step(batches))
    for _ in range(99):
        last = trainer.l_step(batches)
    assert objective(trainer.l_step(batches)) < first
    assert last.lc1 is not None


def test_l_step_without_separation(toy_dataset, small_config):
    config = small_config.model_copy(update={"alpha": 0.0})
    trainer = DaclTrainer(init_params(config, toy_dataset.vocab_size, 2), config)
    bundle = trainer.l_step(_full_batches(toy_dataset))
    assert bundle.lsep is not None and bundle.lsep >= 0.0


def test_a_step_improves_discriminator(toy_dataset, small_config):
    config = small_config.model_copy(update={"lr": 1e-3})
    trainer = DaclTrainer(init_params(config, toy_dataset.vocab_size, 2), config)
    batches = _full_batches(toy_dataset)
    before = trainer.a_step(batches).ladv_d
    after = trainer.a_step(batches).ladv_d
    assert after >= before


def test_r_step_reduces_discrepancy(toy_dataset, small_config):
    config = small_config.model_copy(update={"lr": 1e-3, "gamma": 0.0})
    trainer = DaclTrainer(init_params(config, toy_dataset.vocab_size, 2), config)
    batches = _full_batches(toy_dataset)
    before = trainer.r_step(batches).ladv_u
    after = trainer.r_step(batches).ladv_u
    assert after <= before


def test_no_c2_skips_discrepancy(toy_dataset, small_config):
    config = small_config.model_copy(update={"ablation": AblationEnum.NO_C2})
    params = init_params(config, toy_dataset.vocab_size, 2)
    trainer = DaclTrainer(params, config)
    batches = _full_batches(toy_dataset)
    assert trainer.l_step(batches).lc2 is None
    a = trainer.a_step(batches)
    assert a.ladv_u is None and a.ladv_d is not None
    assert trainer.r_step(batches).ladv_u is None


def test_no_d_skips_domain_adversary(toy_dataset, small_config):
    config = small_config.model_copy(update={"ablation": AblationEnum.NO_D})
    trainer = DaclTrainer(init_params(config, toy_dataset.vocab_size, 2), config)
    batches = _full_batches(toy_dataset)
    trainer.l_step(batches)
    assert trainer.a_step(batches).ladv_d is None
    assert trainer.r_step(batches).ladv_d is None
    assert not any(group == GROUP_DISC for _, group in trainer._adam)


def test_loss_weights_come_from_config(toy_dataset, small_config):
    config = small_config.model_copy(update={"alpha": 0.3, "gamma": 0.7})
    trainer = DaclTrainer(init_params(config, toy_dataset.vocab_size, 2), config)
    assert trainer.hyper == HyperParams(alpha=0.3, gamma=0.7)


def test_uda_l_step_also_fits_the_shared_only_view(toy_dataset, small_config):
    params = init_params(small_config, toy_dataset.vocab_size, 2)
    full = _full_batches(toy_dataset)
    batches = Batches([full.labeled[0]], full.unlabeled)
    tape = Tape()
    shared_only = extract(params, full.labeled[0].x, 0, tape=tape, zero_domain=True)
    extra_c1 = classification_loss(classify(params, shared_only, 1), full.labeled[0].y).item()
    extra_c2 = classification_loss(classify(params, shared_only, 2), full.labeled[0].y).item()

    plain = DaclTrainer(params.copy(), small_config).l_step(batches)
    adapted = DaclTrainer(params.copy(), small_config, zero_domain={1}).l_step(batches)
    assert adapted.lc1 == pytest.approx(plain.lc1 + extra_c1, rel=1e-12)
    assert adapted.lc2 == pytest.approx(plain.lc2 + extra_c2, rel=1e-12)
    assert adapted.lsep == pytest.approx(plain.lsep, rel=1e-12)


def test_uda_selection_scores_the_shared_only_view(toy_dataset, small_config, monkeypatch):
    views = []
    original = trainer_module.validation_accuracy

    def recording(params, dataset, binarize, zero_domain=frozenset(), label_reads=None):
        views.append(zero_domain)
        return original(params, dataset, binarize, zero_domain, label_reads)

    monkeypatch.setattr(trainer_module, "validation_accuracy", recording)
    train(uda_dataset(toy_dataset, 1), small_config, unlabeled_only={1})
    assert views and all(view == frozenset({0, 1}) for view in views)

    views.clear()
    train(toy_dataset, small_config)
    assert views and all(view == frozenset() for view in views)


# ── Training loop ───────────────────────────────────────


def test_zero_epochs_returns_initial_parameters(toy_dataset, small_config):
    config = small_config.model_copy(update={"epochs": 0})
    initial = init_params(config, toy_dataset.vocab_size, 2).snapshot()
    result = train(toy_dataset, config)
    assert result.reports == []
    for name, array in result.params.named_parameters():
        np.testing.assert_array_equal(array, initial[name])
    assert result.history[0].epoch == 0


def test_training_is_deterministic(toy_dataset, small_config):
    first = train(toy_dataset, small_config)
    second = train(toy_dataset, small_config)
    for (name, a), (_, b) in zip(first.params.named_parameters(), second.params.named_parameters()):
        np.testing.assert_array_equal(a, b, err_msg=name)
    assert [r.losses for r in first.reports] == [r.losses for r in second.reports]
    assert [h.valid_accuracy for h in first.history] == [h.valid_accuracy for h in second.history]


def test_reports_history_and_best_snapshot(toy_dataset, small_config):
    result = train(toy_dataset, small_config)
    steps = math.ceil(16 / small_config.batch_size)
    assert len(result.reports) == small_config.epochs * steps
    assert [h.epoch for h in result.history] == list(range(small_config.epochs + 1))
    assert all(h.valid_accuracy is not None for h in result.history)
    best = max(h.valid_accuracy for h in result.history)
    assert result.history[result.best_epoch].valid_accuracy == best
    assert result.selected is result.best
    for report in result.reports:
        assert all(math.isfinite(v) for v in report.losses.model_dump().values() if v is not None)


def test_metrics_csv(toy_dataset, small_config, tmp_path):
    path = tmp_path / "metrics.csv"
    result = train(toy_dataset, small_config, metrics_path=path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == StepReport.CSV_HEADER
    assert len(rows) - 1 == len(result.reports)
    assert float(rows[1][2]) == result.reports[0].losses.lc1


def test_non_finite_loss_aborts_with_term_name(toy_dataset, small_config, monkeypatch):
    monkeypatch.setattr(trainer_module.DaclTrainer, "l_step", lambda self, batches: LossBundle(lc1=float("nan")))
    with pytest.raises(NumericalAbort, match="lc1") as info:
        train(toy_dataset, small_config)
    assert info.value.exit_code == 3


def test_training_without_validation_uses_final_parameters(toy_dataset, small_config, caplog):
    domains = [DomainPools(p.name, p.labeled, p.unlabeled, [], p.test) for p in toy_dataset.domains]
    dataset = MultiDomainDataset(toy_dataset.vocab_size, domains)
    with caplog.at_level(logging.WARNING):
        result = train(dataset, small_config)
    assert result.best is None
    assert result.selected is result.params
    assert "No validation pools" in caplog.text
