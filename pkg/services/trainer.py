"""
Stepwise adversarial training (L-step, A-step, R-step).

Every iteration samples one labeled and one unlabeled minibatch per domain
and runs the three steps over them in order:

    L-step  descend F_s, {F_d}, C_1, C_2 on  L_c1 + L_c2 + alpha * L_sep     (labeled rows)
    A-step  ascend  C_1, C_2 on  -(L_c1 + L_c2) + L_adv_u                     (labeled + unlabeled)
            ascend  D on  L_adv_d                                            (labeled + unlabeled)
    R-step  descend F_s, {F_d} on  L_adv_u + gamma * L_adv_d                  (fresh forward pass)

Each step updates only its own parameter groups, and every (step, group)
pairing keeps its own Adam moments.
"""

import csv
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError, ContractError, NumericalAbort
from models import EpochSummary, LossBundle, StepReport, TrainConfig
from . import autodiff as ad
from .autodiff import Tape, Value
from .data import MultiDomainDataset, labels_of, to_dense_batch
from .losses import classification_loss, combine, discrepancy_loss, domain_adv_loss, separation_loss
from .network import (
    GROUP_C1,
    GROUP_C2,
    GROUP_DISC,
    GROUP_DOMAIN,
    GROUP_SHARED,
    FeaturePair,
    ModelParams,
    classify,
    discriminate,
    extract,
    init_params,
)
from .optimizer import AdamState, adam_update
from .scoring import pool_accuracy

logger = logging.getLogger(__name__)

STEP_L = "l"
STEP_A = "a"
STEP_R = "r"


# ── Minibatch sampling ──────────────────────────────────


class PoolSampler:
    """Draws fixed-size batches from one pool without replacement, reshuffling when exhausted"""

    def __init__(self, size: int, batch_size: int, rng: np.random.Generator):
        self.size = size
        self.batch_size = batch_size
        self.rng = rng
        self.reshuffles = 0
        self._order = rng.permutation(size)
        self._pos = 0

    def next(self) -> np.ndarray:
        picked = []
        while len(picked) < self.batch_size:
            if self._pos == self.size:
                self._order = self.rng.permutation(self.size)
                self._pos = 0
                self.reshuffles += 1
            take = min(self.batch_size - len(picked), self.size - self._pos)
            picked.extend(self._order[self._pos : self._pos + take].tolist())
            self._pos += take
        return np.asarray(picked, dtype=np.int64)


@dataclass
class LabeledBatch:
    domain: int
    x: np.ndarray
    y: np.ndarray


@dataclass
class UnlabeledBatch:
    domain: int
    x: np.ndarray


@dataclass
class Batches:
    labeled: List[LabeledBatch]
    unlabeled: List[UnlabeledBatch]


class MinibatchStream:
    """
    Seeded per-domain samplers for the labeled and unlabeled pools.

    Domains listed in unlabeled_only (UDA targets) may have an empty labeled
    pool; any other domain must have labels. Labels are read only here and
    in validation, and every read is counted per domain.
    """

    def __init__(
        self,
        dataset: MultiDomainDataset,
        batch_size: int,
        seed: int,
        binarize: bool = False,
        unlabeled_only: Iterable[int] = (),
    ):
        self.dataset = dataset
        self.binarize = binarize
        self.unlabeled_only = frozenset(unlabeled_only)
        self.label_reads: Dict[int, int] = defaultdict(int)
        self.labeled_samplers: Dict[int, PoolSampler] = {}
        self.unlabeled_samplers: Dict[int, PoolSampler] = {}

        for m, pools in enumerate(dataset.domains):
            if pools.labeled and m not in self.unlabeled_only:
                self.labeled_samplers[m] = PoolSampler(len(pools.labeled), batch_size, np.random.default_rng([seed, m, 0]))
            elif m not in self.unlabeled_only:
                raise ConfigurationError(f"domain {pools.name!r} has an empty labeled pool")
            if pools.unlabeled:
                self.unlabeled_samplers[m] = PoolSampler(len(pools.unlabeled), batch_size, np.random.default_rng([seed, m, 1]))
            else:
                logger.warning(f"Domain {pools.name!r} has no unlabeled pool; it contributes labeled rows only")

        if not self.labeled_samplers:
            raise ConfigurationError("no domain has labeled training data")
        largest = max(len(dataset.domains[m].labeled) for m in self.labeled_samplers)
        self.steps_per_epoch = math.ceil(largest / batch_size)

    def sample_batches(self) -> Batches:
        """One labeled and one unlabeled batch per domain"""
        labeled = []
        unlabeled = []
        vocab = self.dataset.vocab_size
        for m, pools in enumerate(self.dataset.domains):
            if m in self.labeled_samplers:
                picked = [pools.labeled[i] for i in self.labeled_samplers[m].next()]
                self.label_reads[m] += len(picked)
                labeled.append(LabeledBatch(m, to_dense_batch(picked, vocab, self.binarize), labels_of(picked)))
            if m in self.unlabeled_samplers:
                picked = [pools.unlabeled[i] for i in self.unlabeled_samplers[m].next()]
                unlabeled.append(UnlabeledBatch(m, to_dense_batch(picked, vocab, self.binarize)))
        return Batches(labeled, unlabeled)


# ── Steps ───────────────────────────────────────────────


def _total(terms: List[Value]) -> Optional[Value]:
    total = None
    for term in terms:
        total = term if total is None else ad.add(total, term)
    return total


def _scalar(value: Optional[Value]) -> Optional[float]:
    return None if value is None else value.item()


class DaclTrainer:
    """Runs L/A/R steps on a ModelParams it exclusively owns"""

    def __init__(self, params: ModelParams, config: TrainConfig, zero_domain: Iterable[int] = ()):
        self.params = params
        self.config = config
        self.hyper = config.hyper
        self.zero_domain: FrozenSet[int] = frozenset(zero_domain)
        self._adam: Dict[Tuple[str, str], AdamState] = {}

    def _update(self, tape: Tape, step: str, group_names: Iterable[str], sign: int) -> None:
        groups = self.params.groups()
        for name in group_names:
            if name not in groups:
                continue
            group = groups[name]
            key = (step, name)
            if key not in self._adam:
                self._adam[key] = AdamState(group)
            grads = [tape.grad_of(p) for p in group]
            adam_update(group, grads, self._adam[key], self.config.lr, sign)

    def _features(self, tape: Tape, x: np.ndarray, domain: int):
        return extract(self.params, x, domain, tape=tape, zero_domain=domain in self.zero_domain)

    def l_step(self, batches: Batches) -> LossBundle:
        """Supervised step with the separation regularizer; touches F_s, {F_d}, C_1, C_2"""
        if not batches.labeled:
            raise ContractError("l_step needs labeled batches")
        tape = Tape()
        lc1_terms, lc2_terms, pairs = [], [], []
        for batch in batches.labeled:
            features = self._features(tape, batch.x, batch.domain)
            lc1_terms.append(classification_loss(classify(self.params, features, 1), batch.y))
            if self.params.c2 is not None:
                lc2_terms.append(classification_loss(classify(self.params, features, 2), batch.y))
            pairs.append(features)
            if self.zero_domain:
                # shared-only view: UDA targets are scored through concat(shared, 0)
                shared_only = FeaturePair(features.shared, tape.zeros(len(batch.y), self.params.domain_dim))
                lc1_terms.append(classification_loss(classify(self.params, shared_only, 1), batch.y))
                if self.params.c2 is not None:
                    lc2_terms.append(classification_loss(classify(self.params, shared_only, 2), batch.y))

        lc1 = _total(lc1_terms)
        lc2 = _total(lc2_terms)
        lsep = separation_loss(pairs)
        terms = [(1.0, lc1), (self.hyper.alpha, lsep)]
        if lc2 is not None:
            terms.append((1.0, lc2))
        ad.backward(combine(terms))
        self._update(tape, STEP_L, (GROUP_SHARED, GROUP_DOMAIN, GROUP_C1, GROUP_C2), sign=1)
        return LossBundle(lc1=lc1.item(), lc2=_scalar(lc2), lsep=lsep.item())

    def _discriminator_inputs(self, tape: Tape, batches: Batches, shared_by_domain: Dict[int, List[Value]]) -> List[Optional[Value]]:
        """Per-domain discriminator outputs over the labeled and unlabeled rows of that domain"""
        outputs: List[Optional[Value]] = [None] * self.params.num_domains
        for m in range(self.params.num_domains):
            parts = shared_by_domain.get(m, [])
            if not parts:
                continue
            stacked = parts[0]
            for part in parts[1:]:
                stacked = ad.concat_rows(stacked, part)
            outputs[m] = discriminate(self.params, stacked)
        return outputs

    def a_step(self, batches: Batches) -> LossBundle:
        """
        Adversarial opponent step: ascend C_1/C_2 on -(L_c1 + L_c2) + L_adv_u,
        then ascend D on L_adv_d. Extractors are left untouched.
        """
        if not batches.labeled:
            raise ContractError("a_step needs labeled batches")
        use_c2 = self.params.c2 is not None
        use_disc = self.params.disc is not None
        tape = Tape()
        shared_by_domain: Dict[int, List[Value]] = defaultdict(list)

        lc_terms, discrepancy_pairs = [], []
        for batch in batches.labeled:
            features = self._features(tape, batch.x, batch.domain)
            shared_by_domain[batch.domain].append(features.shared)
            if use_c2:
                lc_terms.append(classification_loss(classify(self.params, features, 1), batch.y))
                lc_terms.append(classification_loss(classify(self.params, features, 2), batch.y))
        for batch in batches.unlabeled:
            features = self._features(tape, batch.x, batch.domain)
            shared_by_domain[batch.domain].append(features.shared)
            if use_c2:
                discrepancy_pairs.append((classify(self.params, features, 1), classify(self.params, features, 2)))

        ladv_u = None
        if use_c2 and discrepancy_pairs:
            ladv_u = discrepancy_loss(discrepancy_pairs)
            objective = combine([(-1.0, _total(lc_terms)), (1.0, ladv_u)])
            ad.backward(objective)
            self._update(tape, STEP_A, (GROUP_C1, GROUP_C2), sign=-1)

        ladv_d = None
        if use_disc:
            ladv_d = domain_adv_loss(self._discriminator_inputs(tape, batches, shared_by_domain), self.params.num_domains)
            tape.zero_grad()
            ad.backward(ladv_d)
            self._update(tape, STEP_A, (GROUP_DISC,), sign=-1)

        return LossBundle(ladv_d=_scalar(ladv_d), ladv_u=_scalar(ladv_u))

    def r_step(self, batches: Batches) -> LossBundle:
        """Refinement step: descend F_s and {F_d} on L_adv_u + gamma * L_adv_d from a fresh forward pass"""
        use_c2 = self.params.c2 is not None
        use_disc = self.params.disc is not None
        tape = Tape()
        shared_by_domain: Dict[int, List[Value]] = defaultdict(list)

        discrepancy_pairs = []
        for batch in batches.unlabeled:
            features = self._features(tape, batch.x, batch.domain)
            shared_by_domain[batch.domain].append(features.shared)
            if use_c2:
                discrepancy_pairs.append((classify(self.params, features, 1), classify(self.params, features, 2)))

        ladv_u = discrepancy_loss(discrepancy_pairs) if use_c2 and discrepancy_pairs else None
        ladv_d = None
        if use_disc:
            for batch in batches.labeled:
                x = tape.constant(batch.x)
                shared_by_domain[batch.domain].insert(0, self.params.shared.forward(tape, x))
            ladv_d = domain_adv_loss(self._discriminator_inputs(tape, batches, shared_by_domain), self.params.num_domains)

        terms = []
        if ladv_u is not None:
            terms.append((1.0, ladv_u))
        if ladv_d is not None:
            terms.append((self.hyper.gamma, ladv_d))
        if any(weight != 0.0 for weight, _ in terms):
            ad.backward(combine(terms))
            self._update(tape, STEP_R, (GROUP_SHARED, GROUP_DOMAIN), sign=1)
        return LossBundle(ladv_d=_scalar(ladv_d), ladv_u=_scalar(ladv_u))


# ── Training loop ───────────────────────────────────────


@dataclass
class TrainResult:
    params: ModelParams
    best: Optional[ModelParams] = None
    best_epoch: Optional[int] = None
    reports: List[StepReport] = field(default_factory=list)
    history: List[EpochSummary] = field(default_factory=list)
    label_reads: Dict[int, int] = field(default_factory=dict)

    @property
    def selected(self) -> ModelParams:
        """Best-on-validation parameters when validation ran, else the final ones"""
        return self.best if self.best is not None else self.params


def _check_finite(losses: LossBundle, epoch: int, step: int) -> None:
    for term, value in losses.model_dump().items():
        if value is not None and not math.isfinite(value):
            raise NumericalAbort(term, value, epoch, step)


def _mean_losses(reports: List[StepReport]) -> LossBundle:
    means = {}
    for term in LossBundle.model_fields:
        values = [getattr(r.losses, term) for r in reports if getattr(r.losses, term) is not None]
        means[term] = float(np.mean(values)) if values else None
    return LossBundle(**means)


def validation_accuracy(
    params: ModelParams,
    dataset: MultiDomainDataset,
    binarize: bool,
    zero_domain: FrozenSet[int] = frozenset(),
    label_reads: Optional[Dict[int, int]] = None,
) -> Optional[float]:
    """Unweighted mean accuracy over the domains that have a validation pool"""
    accuracies = []
    for m, pools in enumerate(dataset.domains):
        if not pools.valid:
            continue
        if label_reads is not None:
            label_reads[m] += len(pools.valid)
        accuracies.append(pool_accuracy(params, pools.valid, m, dataset.vocab_size, binarize, m in zero_domain))
    return float(np.mean(accuracies)) if accuracies else None


def train(
    dataset: MultiDomainDataset,
    config: TrainConfig,
    unlabeled_only: Iterable[int] = (),
    metrics_path: Optional[Path] = None,
    params: Optional[ModelParams] = None,
) -> TrainResult:
    """
    Run the full training loop.

    Args:
        dataset: training pools; validation pools (if any) drive best-snapshot selection
        config: resolved training configuration
        unlabeled_only: UDA target domains (no labels, zeroed domain features)
        metrics_path: optional CSV file receiving one StepReport row per iteration
        params: start from these parameters instead of a fresh init

    Returns:
        TrainResult with final and best parameters, step reports and epoch history
    """
    unlabeled_only = frozenset(unlabeled_only)
    params = params or init_params(config, dataset.vocab_size, dataset.num_domains)
    stream = MinibatchStream(dataset, config.batch_size, config.seed, config.binarize, unlabeled_only)
    trainer = DaclTrainer(params, config, zero_domain=unlabeled_only)
    result = TrainResult(params=params)
    # with UDA targets the snapshot is chosen on the shared-only view they are scored with
    validation_view = frozenset(range(dataset.num_domains)) if unlabeled_only else frozenset()

    accuracy = validation_accuracy(params, dataset, config.binarize, validation_view, stream.label_reads)
    result.history.append(EpochSummary(epoch=0, valid_accuracy=accuracy))
    best_accuracy = -1.0
    if accuracy is not None:
        best_accuracy, result.best, result.best_epoch = accuracy, params.copy(), 0
    else:
        logger.warning("No validation pools; the final parameters will be used for evaluation")

    logger.info(
        f"Training {dataset.num_domains} domains for {config.epochs} epochs x {stream.steps_per_epoch} steps "
        f"(ablation {config.ablation.value}, seed {config.seed}, fingerprint {config.fingerprint()})"
    )

    metrics_file = None
    writer = None
    if metrics_path is not None:
        metrics_file = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(metrics_file)
        writer.writerow(StepReport.CSV_HEADER)

    try:
        for epoch in range(1, config.epochs + 1):
            epoch_reports = []
            for step in range(stream.steps_per_epoch):
                batches = stream.sample_batches()
                started = time.perf_counter()
                l_losses = trainer.l_step(batches)
                _check_finite(l_losses, epoch, step)
                a_losses = trainer.a_step(batches)
                _check_finite(a_losses, epoch, step)
                r_losses = trainer.r_step(batches)
                _check_finite(r_losses, epoch, step)
                report = StepReport(
                    epoch=epoch,
                    step=step,
                    losses=l_losses.merged(a_losses),
                    wall_ms=(time.perf_counter() - started) * 1000.0,
                )
                epoch_reports.append(report)
                if writer is not None:
                    writer.writerow(report.csv_row())
                logger.debug(f"epoch {epoch} step {step}: {report.losses.model_dump()}")

            result.reports.extend(epoch_reports)
            summary = EpochSummary(epoch=epoch, mean_losses=_mean_losses(epoch_reports))
            if epoch % config.validate_every == 0 or epoch == config.epochs:
                summary.valid_accuracy = validation_accuracy(params, dataset, config.binarize, validation_view, stream.label_reads)
                if summary.valid_accuracy is not None and summary.valid_accuracy > best_accuracy:
                    best_accuracy, result.best, result.best_epoch = summary.valid_accuracy, params.copy(), epoch
            result.history.append(summary)
            logger.info(
                f"Epoch {epoch}/{config.epochs}: lc1={summary.mean_losses.lc1} lsep={summary.mean_losses.lsep} "
                f"ladv_d={summary.mean_losses.ladv_d} ladv_u={summary.mean_losses.ladv_u} "
                f"valid={summary.valid_accuracy} (best epoch {result.best_epoch})"
            )
    finally:
        if metrics_file is not None:
            metrics_file.close()

    result.label_reads = dict(stream.label_reads)
    return result
