"""Adam with bias correction over groups of float64 parameter arrays"""

import logging
from typing import List, Sequence

import numpy as np

from config import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON
from errors import ContractError

logger = logging.getLogger(__name__)


class AdamState:
    """First/second moment buffers for one parameter group plus the step counter"""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        epsilon: float = ADAM_EPSILON,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: List[np.ndarray] = [np.zeros_like(p) for p in params]
        self.v: List[np.ndarray] = [np.zeros_like(p) for p in params]


def adam_update(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    sign: int = 1,
) -> None:
    """
    One Adam step applied in place.

    Args:
        params: parameter arrays of one group (updated in place)
        grads: gradients of the objective w.r.t. params
        state: moment buffers for this (group, objective) pairing
        lr: learning rate
        sign: +1 descends the objective, -1 ascends it (descent on the negated gradient)
    """
    if sign not in (1, -1):
        raise ContractError(f"sign must be +1 or -1, got {sign}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError(f"adam_update got {len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step_size = lr / bc1

    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"adam_update shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        g = g if sign == 1 else -g
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.epsilon)
