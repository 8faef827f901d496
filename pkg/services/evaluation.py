"""
Experiment protocols: accuracy reports, multi-domain runs (single split or
5-fold), ablation arms, unsupervised domain adaptation and loss-weight
sweeps. Independent runs can share a thread pool; results always come back
in submission order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np

from errors import ConfigurationError, ContractError
from models import AblationEnum, EvalReport, SweepSpec, TrainConfig
from .baseline import baseline_accuracy, train_baseline
from .data import DomainPools, MultiDomainDataset, five_fold_split, ratio_split
from .network import ModelParams
from .scoring import pool_accuracy
from .trainer import TrainResult, train

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

UDA_UNLABELED_WITHHELD = "withheld"
UDA_UNLABELED_POOL = "pool"

ARM_FULL = "dacl"
ARM_NAMES = {
    AblationEnum.NONE: ARM_FULL,
    AblationEnum.NO_D: "dacl-no-d",
    AblationEnum.NO_C2: "dacl-no-c2",
}


@dataclass
class RunOutcome:
    """Report of one protocol run plus the per-fold training results behind it"""
    report: EvalReport
    results: List[TrainResult] = field(default_factory=list)
    fold_reports: List[EvalReport] = field(default_factory=list)


def map_runs(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """Apply fn to every item, optionally on a thread pool; output order follows input order"""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, item) for item in items]
        return [future.result() for future in futures]


def _metrics_file(metrics_dir: Optional[Path], name: str) -> Optional[Path]:
    if metrics_dir is None:
        return None
    metrics_dir = Path(metrics_dir)
    metrics_dir.mkdir(parents=True, exist_ok=True)
    return metrics_dir / name


# ── Accuracy ────────────────────────────────────────────


def evaluate(
    params: ModelParams,
    dataset: MultiDomainDataset,
    uda_target: Optional[int] = None,
    config: Optional[TrainConfig] = None,
    domains: Optional[Sequence[int]] = None,
    arm: str = ARM_FULL,
) -> EvalReport:
    """
    Test accuracy per domain using the averaged twin-classifier prediction.

    Args:
        params: trained parameters
        dataset: supplies the labeled test pools
        uda_target: domain scored with its domain-specific block zeroed
        config: used for binarize and the report fingerprint/seed
        domains: restrict scoring to these domain indices (default all)
        arm: label stored in the report
    """
    binarize = config.binarize if config is not None else False
    domains = list(range(dataset.num_domains)) if domains is None else list(domains)
    per_domain = {}
    for m in domains:
        pools = dataset.domains[m]
        if not pools.test:
            raise ConfigurationError(f"domain {pools.name!r} has an empty test pool")
        per_domain[pools.name] = pool_accuracy(params, pools.test, m, dataset.vocab_size, binarize, zero_domain=m == uda_target)
    return EvalReport.from_accuracies(
        per_domain,
        config_fingerprint=config.fingerprint() if config is not None else "",
        seed=config.seed if config is not None else 0,
        arm=arm,
    )


def average_reports(reports: Sequence[EvalReport], **kwargs) -> EvalReport:
    """Per-domain mean over fold reports; the average is recomputed from the per-domain means"""
    if not reports:
        raise ContractError("average_reports needs at least one report")
    names = list(reports[0].per_domain)
    per_domain = {name: float(np.mean([r.per_domain[name] for r in reports])) for name in names}
    return EvalReport.from_accuracies(per_domain, **kwargs)


# ── Splits ──────────────────────────────────────────────


def fold_dataset(dataset: MultiDomainDataset, fold: int, seed: int) -> MultiDomainDataset:
    """Five-fold partition of every labeled pool; unlabeled pools are unchanged"""
    domains = []
    for m, pools in enumerate(dataset.domains):
        train_part, valid_part, test_part = five_fold_split(pools.labeled, fold, seed + m)
        domains.append(DomainPools(pools.name, train_part, pools.unlabeled, valid_part, test_part))
    return MultiDomainDataset(dataset.vocab_size, domains, dataset.meta)


def holdout_dataset(dataset: MultiDomainDataset, seed: int) -> MultiDomainDataset:
    """
    Single split: provided validation/test pools are used as-is, otherwise a
    seeded 70/10/20 split of the labeled pool supplies them.
    """
    if all(pools.test for pools in dataset.domains):
        return dataset
    domains = []
    for m, pools in enumerate(dataset.domains):
        if pools.test:
            domains.append(pools)
            continue
        train_part, valid_part, test_part = ratio_split(pools.labeled, seed + m)
        if pools.valid:
            # a supplied validation pool stands in for the carved one, whose rows go back to training
            domains.append(DomainPools(pools.name, train_part + valid_part, pools.unlabeled, pools.valid, test_part))
        else:
            domains.append(DomainPools(pools.name, train_part, pools.unlabeled, valid_part, test_part))
    logger.info("No test pools supplied; using a seeded 70/10/20 split of the labeled data")
    return MultiDomainDataset(dataset.vocab_size, domains, dataset.meta)


def protocol_datasets(dataset: MultiDomainDataset, folds: int, seed: int) -> List[MultiDomainDataset]:
    if folds == 1:
        return [holdout_dataset(dataset, seed)]
    if folds == 5:
        return [fold_dataset(dataset, k, seed) for k in range(5)]
    raise ConfigurationError(f"folds must be 1 or 5, got {folds}")


# ── Multi-domain classification ─────────────────────────


def run_mdtc(
    dataset: MultiDomainDataset,
    config: TrainConfig,
    folds: int = 1,
    threads: int = 1,
    metrics_dir: Optional[Path] = None,
) -> RunOutcome:
    """Train and test on every fold, then average the per-domain accuracies"""
    arm = ARM_NAMES[config.ablation]
    splits = protocol_datasets(dataset, folds, config.seed)

    def _run_fold(k: int):
        name = "metrics.csv" if folds == 1 else f"metrics_fold{k}.csv"
        result = train(splits[k], config, metrics_path=_metrics_file(metrics_dir, name))
        report = evaluate(result.selected, splits[k], config=config, arm=arm)
        logger.info(f"{arm} fold {k + 1}/{len(splits)}: average accuracy {report.average:.4f}")
        return result, report

    outcomes = map_runs(_run_fold, list(range(len(splits))), threads)
    fold_reports = [report for _, report in outcomes]
    report = average_reports(
        fold_reports,
        config_fingerprint=config.fingerprint(),
        seed=config.seed,
        arm=arm,
        notes=[f"folds={folds}"],
    )
    return RunOutcome(report, [result for result, _ in outcomes], fold_reports)


def run_ablation(
    dataset: MultiDomainDataset,
    config: TrainConfig,
    folds: int = 1,
    threads: int = 1,
    metrics_dir: Optional[Path] = None,
) -> Dict[str, RunOutcome]:
    """Full model, no-discriminator and no-second-classifier arms with identical seeds"""

    def _run_arm(ablation: AblationEnum) -> RunOutcome:
        arm_config = config.model_copy(update={"ablation": ablation})
        arm_dir = Path(metrics_dir) / ARM_NAMES[ablation] if metrics_dir is not None else None
        return run_mdtc(dataset, arm_config, folds, metrics_dir=arm_dir)

    arms = list(ARM_NAMES)
    outcomes = map_runs(_run_arm, arms, threads)
    return {ARM_NAMES[ablation]: outcome for ablation, outcome in zip(arms, outcomes)}


def run_baseline(dataset: MultiDomainDataset, config: TrainConfig, folds: int = 1, threads: int = 1) -> RunOutcome:
    """Shared-only MLP on pooled labels, scored per domain under the same split protocol"""
    splits = protocol_datasets(dataset, folds, config.seed)

    def _run_fold(split: MultiDomainDataset) -> EvalReport:
        model = train_baseline(split, config).model
        per_domain = {
            pools.name: baseline_accuracy(model, pools.test, split.vocab_size, config.binarize) for pools in split.domains
        }
        return EvalReport.from_accuracies(per_domain, config_fingerprint=config.fingerprint(), seed=config.seed, arm="baseline")

    fold_reports = map_runs(_run_fold, splits, threads)
    report = average_reports(
        fold_reports,
        config_fingerprint=config.fingerprint(),
        seed=config.seed,
        arm="baseline",
        notes=[f"folds={folds}"],
    )
    return RunOutcome(report, [], fold_reports)


# ── Unsupervised domain adaptation ──────────────────────


def uda_dataset(dataset: MultiDomainDataset, target: int, unlabeled_source: str = UDA_UNLABELED_WITHHELD) -> MultiDomainDataset:
    """
    Rebuild the pools for adaptation to `target`.

    Every labeled example of the target (labeled, validation and test pools)
    becomes its test set. Its unlabeled training data is either those same
    examples with labels stripped ("withheld") or its own unlabeled pool
    ("pool").
    """
    if not 0 <= target < dataset.num_domains:
        raise ConfigurationError(f"UDA target index {target} outside 0..{dataset.num_domains - 1}")
    if dataset.num_domains < 2:
        raise ConfigurationError("UDA needs at least one source domain besides the target")
    pools = dataset.domains[target]
    withheld = list(pools.labeled) + list(pools.valid) + list(pools.test)
    if not withheld:
        raise ConfigurationError(f"UDA target {pools.name!r} has no labeled examples to test on")

    if unlabeled_source == UDA_UNLABELED_WITHHELD:
        unlabeled = [example.without_label(f"{pools.name}/withheld/{i}") for i, example in enumerate(withheld)]
    elif unlabeled_source == UDA_UNLABELED_POOL:
        unlabeled = list(pools.unlabeled)
    else:
        raise ConfigurationError(f"unknown UDA unlabeled source {unlabeled_source!r}")
    if not unlabeled:
        raise ConfigurationError(f"UDA target {pools.name!r} has no unlabeled data")

    domains = list(dataset.domains)
    domains[target] = DomainPools(pools.name, [], unlabeled, [], withheld)
    return MultiDomainDataset(dataset.vocab_size, domains, dataset.meta)


def run_uda(
    dataset: MultiDomainDataset,
    target: int,
    config: TrainConfig,
    unlabeled_source: str = UDA_UNLABELED_WITHHELD,
    metrics_dir: Optional[Path] = None,
) -> RunOutcome:
    """Train with the target as an unlabeled-only domain and score it with zeroed domain features"""
    adapted = uda_dataset(dataset, target, unlabeled_source)
    name = adapted.domains[target].name
    notes = [f"uda_target={name}", f"uda_unlabeled={unlabeled_source}"]
    if unlabeled_source == UDA_UNLABELED_WITHHELD:
        logger.warning(f"UDA target {name!r} reuses its withheld test examples (labels stripped) as unlabeled data")
        notes.append("target test examples also used unlabeled during training")

    result = train(adapted, config, unlabeled_only={target}, metrics_path=_metrics_file(metrics_dir, "metrics.csv"))
    reads = result.label_reads.get(target, 0)
    if reads != 0:
        raise ContractError(f"UDA target {name!r} had {reads} label reads during training")

    report = evaluate(result.selected, adapted, uda_target=target, config=config, domains=[target], arm=ARM_NAMES[config.ablation])
    report = report.model_copy(update={"notes": notes})
    logger.info(f"UDA target {name}: accuracy {report.average:.4f}")
    return RunOutcome(report, [result], [report])


def run_uda_baseline(
    dataset: MultiDomainDataset,
    target: int,
    config: TrainConfig,
    unlabeled_source: str = UDA_UNLABELED_WITHHELD,
) -> EvalReport:
    """Shared-only MLP trained on pooled source labels, scored on the target"""
    adapted = uda_dataset(dataset, target, unlabeled_source)
    sources = [m for m in range(adapted.num_domains) if m != target]
    model = train_baseline(adapted, config, domains=sources).model
    pools = adapted.domains[target]
    accuracy = baseline_accuracy(model, pools.test, adapted.vocab_size, config.binarize)
    return EvalReport.from_accuracies(
        {pools.name: accuracy},
        config_fingerprint=config.fingerprint(),
        seed=config.seed,
        arm="baseline",
        notes=[f"uda_target={pools.name}"],
    )


# ── Sensitivity sweeps ──────────────────────────────────


def run_sweep(
    dataset: MultiDomainDataset,
    spec: SweepSpec,
    config: TrainConfig,
    folds: int = 1,
    threads: int = 1,
    metrics_dir: Optional[Path] = None,
) -> List[EvalReport]:
    """One run per swept value with the other loss weight pinned to spec.fixed_other"""
    other = "gamma" if spec.parameter.value == "alpha" else "alpha"

    def _run_point(value: float) -> EvalReport:
        point = config.model_copy(update={spec.parameter.value: value, other: spec.fixed_other})
        point_dir = Path(metrics_dir) / f"{spec.parameter.value}_{value:g}" if metrics_dir is not None else None
        report = run_mdtc(dataset, point, folds, metrics_dir=point_dir).report
        logger.info(f"Sweep {spec.parameter.value}={value:g}: average accuracy {report.average:.4f}")
        return report.model_copy(update={"notes": report.notes + [f"{spec.parameter.value}={value!r}", f"{other}={spec.fixed_other!r}"]})

    return map_runs(_run_point, list(spec.values), threads)
