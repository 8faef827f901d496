"""
Reverse-mode automatic differentiation over dense float64 matrices.

A Tape records every operation in creation order, so the recorded list is
already topologically sorted. backward() walks it in reverse, computing
adjoints into a scratch map seeded at the root and then adding them to each
node's grad. Calling backward twice therefore doubles every gradient exactly.

The tape is define-by-run: the trainer builds a fresh one for every step.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, DimensionError, DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# Every differentiable op exposed by this module; the gradient oracle covers each one
REGISTERED_OPS = (
    "matmul",
    "add",
    "sub",
    "scale",
    "mul",
    "relu",
    "log",
    "clamp_min",
    "rowsoftmax",
    "concat_cols",
    "concat_rows",
    "transpose",
    "mean_rows",
    "rowsum",
    "sum_all",
    "l1_rowdiff_mean",
    "frob_sq",
)


def as_matrix(data: ArrayLike) -> np.ndarray:
    """Coerce input to a 2-D float64 array"""
    array = np.asarray(data, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise DimensionError(f"expected a matrix, got array with shape {array.shape}")
    return array


class Value:
    """A matrix node in a computation graph"""

    __slots__ = ("data", "grad", "requires_grad", "tape", "index", "parents", "op", "_backward")

    def __init__(
        self,
        data: np.ndarray,
        tape: "Tape",
        requires_grad: bool,
        parents: Tuple["Value", ...] = (),
        op: str = "leaf",
        backward: Optional[BackwardFn] = None,
    ):
        self.data = data
        self.grad = np.zeros_like(data)
        self.requires_grad = requires_grad
        self.tape = tape
        self.parents = parents
        self.op = op
        self._backward = backward
        self.index = tape._record(self)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 value, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Value(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Value") -> "Value":
        return add(self, other)

    def __sub__(self, other: "Value") -> "Value":
        return sub(self, other)

    def __mul__(self, other: Union["Value", float]) -> "Value":
        if isinstance(other, Value):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other: float) -> "Value":
        return scale(self, float(other))

    def __neg__(self) -> "Value":
        return scale(self, -1.0)

    def __matmul__(self, other: "Value") -> "Value":
        return matmul(self, other)


class Tape:
    """Ordered record of operations; parents always precede their children"""

    def __init__(self):
        self.nodes: List[Value] = []
        self._bound: Dict[int, Value] = {}

    def _record(self, value: Value) -> int:
        self.nodes.append(value)
        return len(self.nodes) - 1

    def leaf(self, data: ArrayLike, requires_grad: bool = True) -> Value:
        """
        Wrap an array as a graph input.

        The array is not copied when it is already a float64 matrix, so
        parameters can be updated in place after backward().
        """
        array = data if isinstance(data, np.ndarray) and data.dtype == np.float64 and data.ndim == 2 else as_matrix(data)
        return Value(array, self, requires_grad=requires_grad)

    def bind(self, parameter: np.ndarray) -> Value:
        """Leaf for a parameter array, created once per tape so repeated uses share one grad"""
        key = id(parameter)
        value = self._bound.get(key)
        if value is None:
            value = self.leaf(parameter)
            self._bound[key] = value
        return value

    def grad_of(self, parameter: np.ndarray) -> np.ndarray:
        """Accumulated gradient of a bound parameter (zeros if it never entered the graph)"""
        value = self._bound.get(id(parameter))
        if value is None:
            return np.zeros_like(parameter)
        return value.grad

    def constant(self, data: ArrayLike) -> Value:
        return self.leaf(data, requires_grad=False)

    def zeros(self, rows: int, cols: int) -> Value:
        return self.constant(np.zeros((rows, cols)))

    def zero_grad(self) -> None:
        """Graph reset: every recorded gradient becomes exactly zero"""
        for node in self.nodes:
            node.grad.fill(0.0)

    def clear(self) -> None:
        self.nodes = []
        self._bound = {}


def _same_tape(*values: Value) -> "Tape":
    tape = values[0].tape
    for value in values[1:]:
        if value.tape is not tape:
            raise ContractError("operands belong to different tapes")
    return tape


def _result(data: np.ndarray, parents: Tuple[Value, ...], op: str, backward: BackwardFn) -> Value:
    tape = _same_tape(*parents)
    requires_grad = any(p.requires_grad for p in parents)
    return Value(data, tape, requires_grad, parents, op, backward if requires_grad else None)


def backward(root: Value) -> None:
    """Accumulate d(root)/d(node) into the grad of every node that requires it"""
    if root.shape != (1, 1):
        raise ContractError(f"backward() needs a scalar (1x1) root, got {root.shape}")
    if not root.requires_grad:
        return

    nodes = root.tape.nodes
    adjoints = {root.index: np.ones((1, 1))}
    for node in reversed(nodes[: root.index + 1]):
        g = adjoints.pop(node.index, None)
        if g is None:
            continue
        node.grad += g
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node.parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            previous = adjoints.get(parent.index)
            adjoints[parent.index] = parent_grad if previous is None else previous + parent_grad


# ── Affine ──────────────────────────────────────────────


def _matmul_backward(a: np.ndarray, b: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return g @ b.T, a.T @ g


def matmul(a: Value, b: Value) -> Value:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), "matmul", lambda g: _matmul_backward(a.data, b.data, g))


def add(a: Value, b: Value) -> Value:
    """Elementwise sum; b may also be a 1 x cols row vector added to every row"""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return _result(a.data + b.data, (a, b), "add", lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def scale(a: Value, factor: float) -> Value:
    return _result(a.data * factor, (a,), "scale", lambda g: (g * factor,))


def mul(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    return _result(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


# ── Elementwise nonlinearities ──────────────────────────


def relu(a: Value) -> Value:
    # subgradient 0 at exactly 0
    mask = (a.data > 0.0).astype(np.float64)
    return _result(np.where(a.data > 0.0, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def log(a: Value) -> Value:
    if not np.all(a.data > 0.0):
        raise DomainError(f"log of non-positive entry (min {a.data.min()!r}) in {a.shape} operand")
    return _result(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def clamp_min(a: Value, floor: float) -> Value:
    """max(a, floor); gradient passes only where a > floor"""
    mask = (a.data > floor).astype(np.float64)
    return _result(np.maximum(a.data, floor), (a,), "clamp_min", lambda g: (g * mask,))


def rowsoftmax(a: Value) -> Value:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def _backward(g: np.ndarray):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), "rowsoftmax", _backward)


# ── Structural ──────────────────────────────────────────


def concat_cols(a: Value, b: Value) -> Value:
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols row mismatch: {a.shape} ++ {b.shape}")
    split = a.shape[1]
    return _result(
        np.concatenate([a.data, b.data], axis=1),
        (a, b),
        "concat_cols",
        lambda g: (g[:, :split], g[:, split:]),
    )


def concat_rows(a: Value, b: Value) -> Value:
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"concat_rows column mismatch: {a.shape} over {b.shape}")
    split = a.shape[0]
    return _result(
        np.concatenate([a.data, b.data], axis=0),
        (a, b),
        "concat_rows",
        lambda g: (g[:split], g[split:]),
    )


def transpose(a: Value) -> Value:
    return _result(a.data.T.copy(), (a,), "transpose", lambda g: (g.T,))


# ── Reductions ──────────────────────────────────────────


def mean_rows(a: Value) -> Value:
    """1 x cols row of column means (1x1 on a column vector)"""
    rows = a.shape[0]
    return _result(
        a.data.mean(axis=0, keepdims=True),
        (a,),
        "mean_rows",
        lambda g: (np.broadcast_to(g / rows, a.shape).copy(),),
    )


def rowsum(a: Value) -> Value:
    """rows x 1 column of row sums"""
    return _result(
        a.data.sum(axis=1, keepdims=True),
        (a,),
        "rowsum",
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def sum_all(a: Value) -> Value:
    return _result(
        np.array([[a.data.sum()]]),
        (a,),
        "sum_all",
        lambda g: (np.full(a.shape, g[0, 0]),),
    )


def l1_rowdiff_mean(p: Value, q: Value) -> Value:
    """Mean over rows of the L1 distance between matching rows of p and q"""
    if p.shape != q.shape:
        raise DimensionError(f"l1_rowdiff_mean shape mismatch: {p.shape} vs {q.shape}")
    diff = p.data - q.data
    rows = p.shape[0]
    # np.sign gives the subgradient 0 at exactly 0
    sign = np.sign(diff)

    def _backward(g: np.ndarray):
        dp = sign * (g[0, 0] / rows)
        return dp, -dp

    return _result(np.array([[np.abs(diff).sum() / rows]]), (p, q), "l1_rowdiff_mean", _backward)


def frob_sq(a: Value) -> Value:
    """Squared Frobenius norm"""
    return _result(
        np.array([[np.square(a.data).sum()]]),
        (a,),
        "frob_sq",
        lambda g: (2.0 * g[0, 0] * a.data,),
    )
