"""
Finite-difference gradient oracle.

Every registered autodiff op, each composite loss and the full L-step
objective are compared against central differences on seeded random
instances. Inputs are drawn away from kinks (relu at 0, clamp floors, equal
entries under L1) so the comparison is well posed.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError
from models import OutputActivation, TrainConfig
from . import autodiff as ad
from .autodiff import REGISTERED_OPS, Tape, Value
from .losses import classification_loss, discrepancy_loss, domain_adv_loss, separation_loss
from .network import FeaturePair, Mlp, ModelParams, classify, extract, init_params

logger = logging.getLogger(__name__)

STEP = 1e-5
OP_TOLERANCE = 1e-4
COMPOSITE_TOLERANCE = 1e-3
DEFAULT_CASES = 20
_TINY = 1e-12
# relative to the whole gradient, below which an array counts as zero
SCALE_FLOOR = 1e-6
KINK_MARGIN = 1e-3
KINK_ATTEMPTS = 100

Objective = Callable[[Tape, List[Value]], Value]


@dataclass
class GradCase:
    """Arrays to differentiate with respect to and a scalar objective over their leaves"""
    arrays: List[np.ndarray]
    objective: Objective


@dataclass
class GradcheckEntry:
    name: str
    kind: str
    tolerance: float
    cases: int = 0
    worst_error: float = 0.0
    worst_shapes: List[Tuple[int, ...]] = field(default_factory=list)
    worst_array: int = 0

    @property
    def passed(self) -> bool:
        return self.cases > 0 and self.worst_error < self.tolerance

    def describe(self) -> str:
        status = "ok" if self.passed else "FAIL"
        # the array with the worst error is starred
        shapes = " ".join(
            "x".join(str(d) for d in shape) + ("*" if i == self.worst_array else "") for i, shape in enumerate(self.worst_shapes)
        )
        return f"{self.name:<18} {self.kind:<10} {self.cases:>5} {self.worst_error:>12.3e} {self.tolerance:>9.0e}  {status:<4} [{shapes}]"


@dataclass
class GradcheckReport:
    entries: List[GradcheckEntry]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    @property
    def failures(self) -> List[GradcheckEntry]:
        return [entry for entry in self.entries if not entry.passed]

    def table(self) -> str:
        header = f"{'name':<18} {'kind':<10} {'cases':>5} {'worst_error':>12} {'tolerance':>9}  status shapes"
        lines = [header, "-" * len(header)]
        lines.extend(entry.describe() for entry in self.entries)
        lines.append(f"{len(self.entries)} checks, {len(self.failures)} failed, {self.seconds:.1f}s")
        return "\n".join(lines)


# ── Oracle ──────────────────────────────────────────────


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = _TINY) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)"""
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor))


def _evaluate(case: GradCase) -> float:
    tape = Tape()
    return case.objective(tape, [tape.bind(a) for a in case.arrays]).item()


def _central_differences(case: GradCase, array: np.ndarray, step: float) -> np.ndarray:
    flat = array.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = _evaluate(case)
        flat[i] = original - step
        minus = _evaluate(case)
        flat[i] = original
        numeric[i] = (plus - minus) / (2.0 * step)
    return numeric.reshape(array.shape)


def array_errors(case: GradCase, step: float = STEP) -> List[float]:
    """
    Relative error between backward() and central differences, one per input array.

    Arrays whose gradients are zero up to SCALE_FLOOR of the whole gradient
    are measured against that floor instead of their own norm.
    """
    tape = Tape()
    leaves = [tape.bind(a) for a in case.arrays]
    ad.backward(case.objective(tape, leaves))
    analytic = [tape.grad_of(a).copy() for a in case.arrays]
    numeric = [_central_differences(case, a, step) for a in case.arrays]
    scale = sum(np.linalg.norm(a) + np.linalg.norm(n) for a, n in zip(analytic, numeric))
    floor = max(_TINY, SCALE_FLOOR * scale)
    return [relative_error(a, n, floor) for a, n in zip(analytic, numeric)]


def check_case(case: GradCase, step: float = STEP) -> float:
    """Worst per-array relative error of the case"""
    return max(array_errors(case, step))


# ── Case builders ───────────────────────────────────────


def _shape(rng: np.random.Generator, lo: int = 1, hi: int = 4) -> Tuple[int, int]:
    return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))


def _away_from(rng: np.random.Generator, shape: Tuple[int, int], point: float = 0.0, gap: float = 0.05) -> np.ndarray:
    """Random entries with |x - point| >= gap"""
    magnitude = rng.uniform(gap, 1.5, size=shape)
    return point + np.where(rng.random(shape) < 0.5, -magnitude, magnitude)


def _project(tape: Tape, out: Value, weights: np.ndarray) -> Value:
    """Scalarize a matrix output with fixed random weights"""
    return ad.sum_all(ad.mul(out, tape.constant(weights)))


def _unary(rng, data: np.ndarray, op: Callable[[Value], Value]) -> GradCase:
    out_shape = op(Tape().constant(data)).shape
    weights = rng.normal(size=out_shape)
    return GradCase([data], lambda tape, v: _project(tape, op(v[0]), weights))


def _binary(rng, a: np.ndarray, b: np.ndarray, op: Callable[[Value, Value], Value]) -> GradCase:
    tape = Tape()
    out_shape = op(tape.constant(a), tape.constant(b)).shape
    weights = rng.normal(size=out_shape)
    return GradCase([a, b], lambda tape, v: _project(tape, op(v[0], v[1]), weights))


def _case_matmul(rng):
    n, k = _shape(rng)
    m = int(rng.integers(1, 5))
    return _binary(rng, rng.normal(size=(n, k)), rng.normal(size=(k, m)), ad.matmul)


def _case_add(rng):
    shape = _shape(rng)
    bias_shape = (1, shape[1]) if rng.random() < 0.5 else shape
    return _binary(rng, rng.normal(size=shape), rng.normal(size=bias_shape), ad.add)


def _case_sub(rng):
    shape = _shape(rng)
    return _binary(rng, rng.normal(size=shape), rng.normal(size=shape), ad.sub)


def _case_scale(rng):
    factor = float(rng.normal())
    return _unary(rng, rng.normal(size=_shape(rng)), lambda v: ad.scale(v, factor))


def _case_mul(rng):
    shape = _shape(rng)
    return _binary(rng, rng.normal(size=shape), rng.normal(size=shape), ad.mul)


def _case_relu(rng):
    return _unary(rng, _away_from(rng, _shape(rng)), ad.relu)


def _case_log(rng):
    return _unary(rng, rng.uniform(0.5, 2.0, size=_shape(rng)), ad.log)


def _case_clamp_min(rng):
    floor = float(rng.uniform(-0.5, 0.5))
    return _unary(rng, _away_from(rng, _shape(rng), floor), lambda v: ad.clamp_min(v, floor))


def _case_rowsoftmax(rng):
    return _unary(rng, rng.normal(size=_shape(rng, 1, 5)), ad.rowsoftmax)


def _case_concat_cols(rng):
    rows = int(rng.integers(1, 5))
    return _binary(rng, rng.normal(size=(rows, int(rng.integers(1, 4)))), rng.normal(size=(rows, int(rng.integers(1, 4)))), ad.concat_cols)


def _case_concat_rows(rng):
    cols = int(rng.integers(1, 5))
    return _binary(rng, rng.normal(size=(int(rng.integers(1, 4)), cols)), rng.normal(size=(int(rng.integers(1, 4)), cols)), ad.concat_rows)


def _case_transpose(rng):
    return _unary(rng, rng.normal(size=_shape(rng)), ad.transpose)


def _case_mean_rows(rng):
    return _unary(rng, rng.normal(size=_shape(rng)), ad.mean_rows)


def _case_rowsum(rng):
    return _unary(rng, rng.normal(size=_shape(rng)), ad.rowsum)


def _case_sum_all(rng):
    data = rng.normal(size=_shape(rng))
    # sum_all output is already scalar; square it so the gradient is not constant
    return GradCase([data], lambda tape, v: ad.mul(ad.sum_all(v[0]), ad.sum_all(v[0])))


def _case_l1_rowdiff_mean(rng):
    shape = _shape(rng)
    p = rng.normal(size=shape)
    q = p + _away_from(rng, shape)
    return GradCase([p, q], lambda tape, v: ad.l1_rowdiff_mean(v[0], v[1]))


def _case_frob_sq(rng):
    return GradCase([rng.normal(size=_shape(rng))], lambda tape, v: ad.frob_sq(v[0]))


OP_CASES: Dict[str, Callable[[np.random.Generator], GradCase]] = {
    "matmul": _case_matmul,
    "add": _case_add,
    "sub": _case_sub,
    "scale": _case_scale,
    "mul": _case_mul,
    "relu": _case_relu,
    "log": _case_log,
    "clamp_min": _case_clamp_min,
    "rowsoftmax": _case_rowsoftmax,
    "concat_cols": _case_concat_cols,
    "concat_rows": _case_concat_rows,
    "transpose": _case_transpose,
    "mean_rows": _case_mean_rows,
    "rowsum": _case_rowsum,
    "sum_all": _case_sum_all,
    "l1_rowdiff_mean": _case_l1_rowdiff_mean,
    "frob_sq": _case_frob_sq,
}


def _case_classification_loss(rng):
    rows = int(rng.integers(1, 6))
    labels = rng.integers(0, 2, size=rows)
    return GradCase([rng.normal(size=(rows, 2))], lambda tape, v: classification_loss(ad.rowsoftmax(v[0]), labels))


def _case_separation_loss(rng):
    domains = int(rng.integers(1, 4))
    arrays = []
    for _ in range(domains):
        rows = int(rng.integers(1, 5))
        arrays.extend([rng.normal(size=(rows, int(rng.integers(1, 4)))), rng.normal(size=(rows, int(rng.integers(1, 4))))])

    def objective(tape, v):
        return separation_loss([FeaturePair(v[i], v[i + 1]) for i in range(0, len(v), 2)])

    return GradCase(arrays, objective)


def _case_domain_adv_loss(rng):
    domains = int(rng.integers(2, 5))
    arrays = [rng.normal(size=(int(rng.integers(1, 5)), domains)) for _ in range(domains)]
    return GradCase(arrays, lambda tape, v: domain_adv_loss([ad.rowsoftmax(x) for x in v], domains))


def _case_discrepancy_loss(rng):
    domains = int(rng.integers(1, 4))
    arrays = []
    for _ in range(domains):
        rows = int(rng.integers(1, 5))
        p = rng.normal(size=(rows, 2))
        # keep softmax outputs apart so |p1 - p2| stays off its kink
        q = p + np.array([[1.0, -1.0]]) * _away_from(rng, (rows, 1), gap=0.3)
        arrays.extend([p, q])

    def objective(tape, v):
        return discrepancy_loss([(ad.rowsoftmax(v[i]), ad.rowsoftmax(v[i + 1])) for i in range(0, len(v), 2)])

    return GradCase(arrays, objective)


def _relu_margin(mlp: Mlp, x: np.ndarray) -> Tuple[float, np.ndarray]:
    """Smallest |pre-activation| over every relu unit x passes through, and the network output"""
    margin = np.inf
    h = x
    last = len(mlp.weights) - 1
    for layer, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        if layer < last or mlp.spec.output_activation == OutputActivation.RELU:
            margin = min(margin, float(np.abs(z).min()))
            z = np.maximum(z, 0.0)
        h = z
    return margin, h


def _model_margin(params: ModelParams, batches) -> float:
    margin = np.inf
    for m, (x, _) in enumerate(batches):
        shared_margin, shared = _relu_margin(params.shared, x)
        domain_margin, domain = _relu_margin(params.domain[m], x)
        joint = np.concatenate([shared, domain], axis=1)
        margin = min(margin, shared_margin, domain_margin, _relu_margin(params.c1, joint)[0], _relu_margin(params.c2, joint)[0])
    return margin


def _case_l_objective(rng):
    """L_c1 + L_c2 + alpha * L_sep of a tiny two-domain model, w.r.t. every extractor and classifier parameter"""
    input_dim = 5
    for _ in range(KINK_ATTEMPTS):
        config = TrainConfig(
            shared_dim=3,
            domain_dim=2,
            extractor_hidden=(4,),
            c1_hidden=3,
            c2_hidden=3,
            disc_hidden=3,
            seed=int(rng.integers(0, 2**31)),
        )
        params = init_params(config, input_dim, 2)
        # zero biases leave dead units sitting exactly on the relu kink
        for _, network in params.named_networks():
            for b in network.biases:
                b[...] = rng.normal(0.0, 0.5, size=b.shape)
        batches = [(rng.uniform(0.0, 2.0, size=(3, input_dim)), rng.integers(0, 2, size=3)) for _ in range(2)]
        if _model_margin(params, batches) >= KINK_MARGIN:
            break
    else:
        raise ContractError(f"no l_objective instance off the relu kinks after {KINK_ATTEMPTS} draws")
    arrays = params.shared.parameters() + [p for f in params.domain for p in f.parameters()]
    arrays += params.c1.parameters() + params.c2.parameters()

    def objective(tape, v):
        terms, pairs = [], []
        for m, (x, y) in enumerate(batches):
            features = extract(params, x, m, tape=tape)
            terms.append(classification_loss(classify(params, features, 1), y))
            terms.append(classification_loss(classify(params, features, 2), y))
            pairs.append(features)
        total = ad.scale(separation_loss(pairs), config.alpha)
        for term in terms:
            total = ad.add(total, term)
        return total

    return GradCase(arrays, objective)


COMPOSITE_CASES: Dict[str, Callable[[np.random.Generator], GradCase]] = {
    "classification": _case_classification_loss,
    "separation": _case_separation_loss,
    "domain_adv": _case_domain_adv_loss,
    "discrepancy": _case_discrepancy_loss,
    "l_objective": _case_l_objective,
}


# ── Runner ──────────────────────────────────────────────


def _run_entry(name: str, kind: str, builder, tolerance: float, cases: int, seed: int, index: int) -> GradcheckEntry:
    entry = GradcheckEntry(name=name, kind=kind, tolerance=tolerance)
    for case_index in range(cases):
        rng = np.random.default_rng([seed, index, case_index])
        case = builder(rng)
        errors = array_errors(case)
        worst = int(np.argmax(errors))
        entry.cases += 1
        if errors[worst] >= entry.worst_error:
            entry.worst_error = errors[worst]
            entry.worst_shapes = [a.shape for a in case.arrays]
            entry.worst_array = worst
    if not entry.passed:
        logger.error(
            f"Gradient check failed for {name}: worst relative error {entry.worst_error:.3e} "
            f"on array {entry.worst_array} of shapes {entry.worst_shapes}"
        )
    return entry


def run_gradcheck(cases: int = DEFAULT_CASES, seed: int = 0, only: Optional[Sequence[str]] = None) -> GradcheckReport:
    """
    Check every registered op (one entry each) and every composite objective.

    Args:
        cases: seeded random instances per entry
        seed: base seed for the instance generators
        only: optional subset of entry names to run

    Returns:
        GradcheckReport with the worst relative error per entry
    """
    missing = [op for op in REGISTERED_OPS if op not in OP_CASES]
    if missing:
        raise ContractError(f"no gradient case for registered ops {missing}")

    started = time.perf_counter()
    entries = []
    plan = [(name, "op", builder, OP_TOLERANCE) for name, builder in OP_CASES.items()]
    plan += [(name, "composite", builder, COMPOSITE_TOLERANCE) for name, builder in COMPOSITE_CASES.items()]
    for index, (name, kind, builder, tolerance) in enumerate(plan):
        if only is not None and name not in only:
            continue
        entries.append(_run_entry(name, kind, builder, tolerance, cases, seed, index))
    report = GradcheckReport(entries, seconds=time.perf_counter() - started)
    logger.info(f"Gradient oracle: {len(entries)} checks, {len(report.failures)} failed in {report.seconds:.1f}s")
    return report
