"""
Scalar DACL objectives built from autodiff ops.

Expectations over pools are realized as per-domain batch means and the
per-domain terms are summed, so every domain weighs the same regardless of
pool size. Probabilities are clamped at PROB_FLOOR before every log.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import PROB_FLOOR
from errors import ContractError
from . import autodiff as ad
from .autodiff import Tape, Value
from .network import NUM_CLASSES, FeaturePair

logger = logging.getLogger(__name__)

MatrixOrValue = Union[np.ndarray, Value]


def _to_value(x: MatrixOrValue, tape: Optional[Tape]) -> Value:
    if isinstance(x, Value):
        return x
    return (tape if tape is not None else Tape()).constant(x)


def _tape_of(items: Sequence[MatrixOrValue]) -> Tape:
    for item in items:
        if isinstance(item, Value):
            return item.tape
    return Tape()


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    encoded = np.zeros((len(indices), width))
    encoded[np.arange(len(indices)), indices] = 1.0
    return encoded


def mean_log_likelihood(probs: Value, targets: np.ndarray) -> Value:
    """Mean over rows of log p[row, target[row]] with p clamped at PROB_FLOOR"""
    mask = probs.tape.constant(one_hot(targets, probs.shape[1]))
    picked = ad.mul(ad.log(ad.clamp_min(probs, PROB_FLOOR)), mask)
    return ad.scale(ad.sum_all(picked), 1.0 / probs.shape[0])


def classification_loss(probs: MatrixOrValue, labels: Sequence[int]) -> Value:
    """Negative log-likelihood of the true labels, averaged over rows"""
    probs = _to_value(probs, None)
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != probs.shape[0]:
        raise ContractError(f"need one label per row: {len(labels)} labels for {probs.shape} probabilities")
    if probs.shape[1] != NUM_CLASSES:
        raise ContractError(f"expected {NUM_CLASSES} class columns, got {probs.shape[1]}")
    if not np.all(np.isin(labels, (0, 1))):
        raise ContractError(f"labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    return ad.scale(mean_log_likelihood(probs, labels.astype(np.int64)), -1.0)


def separation_loss(pairs: Sequence[FeaturePair]) -> Value:
    """
    Sum over domains of ||S_m^T D_m||_F^2.

    S_m^T D_m is the sum over the batch of outer products s(x) d(x)^T, so
    opposite-signed contributions cancel before the norm is taken.
    """
    if not pairs:
        raise ContractError("separation_loss needs at least one domain batch")
    total: Optional[Value] = None
    for pair in pairs:
        overlap = ad.matmul(ad.transpose(pair.shared), pair.domain)
        term = ad.frob_sq(overlap)
        total = term if total is None else ad.add(total, term)
    return total


def domain_adv_loss(domain_probs: Sequence[Optional[MatrixOrValue]], num_domains: Optional[int] = None) -> Value:
    """
    Sum over domains m of the mean log D_m(F_s(x)) on that domain's rows.

    Position m of domain_probs holds the discriminator output for samples
    drawn from domain m (labeled and unlabeled rows together); None entries
    are skipped. The value is always <= 0.
    """
    num_domains = len(domain_probs) if num_domains is None else num_domains
    tape = _tape_of([p for p in domain_probs if p is not None])
    total: Optional[Value] = None
    for m, probs in enumerate(domain_probs):
        if probs is None:
            continue
        probs = _to_value(probs, tape)
        if probs.shape[1] != num_domains:
            raise ContractError(f"discriminator output has {probs.shape[1]} columns, expected M={num_domains}")
        term = mean_log_likelihood(probs, np.full(probs.shape[0], m, dtype=np.int64))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ContractError("domain_adv_loss needs at least one domain batch")
    return total


def discrepancy_loss(pairs: Sequence[Tuple[MatrixOrValue, MatrixOrValue]]) -> Value:
    """Sum over domains of the mean L1 distance between C_1 and C_2 outputs on unlabeled rows"""
    if not pairs:
        raise ContractError("discrepancy_loss needs at least one unlabeled batch")
    tape = _tape_of([p for pair in pairs for p in pair])
    total: Optional[Value] = None
    for p1, p2 in pairs:
        p1, p2 = _to_value(p1, tape), _to_value(p2, tape)
        if p1.shape != p2.shape:
            raise ContractError(f"classifier outputs differ in shape: {p1.shape} vs {p2.shape}")
        term = ad.l1_rowdiff_mean(p1, p2)
        total = term if total is None else ad.add(total, term)
    # each row of two row-stochastic vectors is at most 2 apart
    bound = 2.0 * len(pairs) + 1e-9
    if total.item() > bound:
        raise ContractError(f"discrepancy {total.item()} exceeds 2*M = {bound}; inputs are not row-stochastic")
    return total


def combine(terms: List[Tuple[float, Value]]) -> Value:
    """Weighted sum of scalar losses, skipping zero weights"""
    total: Optional[Value] = None
    for weight, term in terms:
        if weight == 0.0:
            continue
        weighted = term if weight == 1.0 else ad.scale(term, weight)
        total = weighted if total is None else ad.add(total, weighted)
    if total is None:
        raise ContractError("combine() needs at least one non-zero weighted term")
    return total
