"""
Tests for the Adam update
"""

import numpy as np
import pytest

from errors import ContractError
from services.optimizer import AdamState, adam_update


def test_zero_gradient_only_advances_t():
    params = [np.array([[1.0, -2.0]])]
    state = AdamState(params)
    adam_update(params, [np.zeros((1, 2))], state, lr=0.1)
    np.testing.assert_array_equal(params[0], [[1.0, -2.0]])
    assert state.t == 1
    assert not state.m[0].any() and not state.v[0].any()


@pytest.mark.parametrize("g", [0.5, 3.0, 1e-3])
def test_first_step_moves_by_about_lr(g):
    params = [np.array([[0.0]])]
    adam_update(params, [np.array([[g]])], AdamState(params), lr=1e-4)
    expected = -1e-4 * g / (g + 1e-8)
    assert params[0][0, 0] == pytest.approx(expected, rel=1e-9)


def test_ascent_mirrors_descent():
    down = [np.array([[0.0]])]
    up = [np.array([[0.0]])]
    adam_update(down, [np.array([[2.0]])], AdamState(down), lr=1e-4, sign=1)
    adam_update(up, [np.array([[2.0]])], AdamState(up), lr=1e-4, sign=-1)
    assert up[0][0, 0] == pytest.approx(-down[0][0, 0])
    assert up[0][0, 0] == pytest.approx(1e-4, rel=1e-6)


def test_moments_track_parameter_shapes():
    params = [np.zeros((3, 2)), np.zeros((1, 2))]
    state = AdamState(params)
    assert [m.shape for m in state.m] == [(3, 2), (1, 2)]
    assert [v.shape for v in state.v] == [(3, 2), (1, 2)]


def test_shape_mismatch():
    params = [np.zeros((2, 2))]
    with pytest.raises(ContractError):
        adam_update(params, [np.zeros((2, 3))], AdamState(params), lr=0.1)


def test_count_mismatch_and_bad_sign():
    params = [np.zeros((2, 2))]
    with pytest.raises(ContractError):
        adam_update(params, [], AdamState(params), lr=0.1)
    with pytest.raises(ContractError):
        adam_update(params, [np.zeros((2, 2))], AdamState(params), lr=0.1, sign=0)


def test_minimizes_a_quadratic():
    target = np.array([[1.5, -0.5]])
    params = [np.zeros((1, 2))]
    state = AdamState(params)
    for _ in range(2000):
        adam_update(params, [2.0 * (params[0] - target)], state, lr=0.01)
    np.testing.assert_allclose(params[0], target, atol=1e-2)
