"""
Tests for the reverse-mode autodiff engine and the gradient oracle
"""

import numpy as np
import pytest

from errors import ContractError, DimensionError, DomainError
from services import autodiff as ad
from services import gradcheck
from services.autodiff import REGISTERED_OPS, Tape


# ── Forward values ──────────────────────────────────────


def test_matmul_identity_and_gradient():
    tape = Tape()
    x = tape.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = ad.matmul(tape.constant(np.eye(2)), x)
    np.testing.assert_array_equal(out.data, x.data)
    ad.backward(ad.sum_all(out))
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_matmul_arithmetic():
    tape = Tape()
    out = tape.leaf([[1, 2], [3, 4]]) @ tape.leaf([[1], [1]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    tape = Tape()
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 2))))


def test_relu_values():
    tape = Tape()
    out = ad.relu(tape.leaf([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])
    assert not np.signbit(out.data).any()


def test_log_of_one_has_unit_gradient():
    tape = Tape()
    x = tape.leaf([[1.0]])
    out = ad.log(x)
    assert out.item() == 0.0
    ad.backward(out)
    assert x.grad[0, 0] == 1.0


def test_log_rejects_non_positive():
    tape = Tape()
    with pytest.raises(DomainError):
        ad.log(tape.leaf([[1.0, 0.0]]))


def test_add_broadcasts_row_bias():
    tape = Tape()
    a = tape.leaf(np.zeros((3, 2)))
    b = tape.leaf([[1.0, 2.0]])
    out = ad.add(a, b)
    np.testing.assert_array_equal(out.data, np.tile([[1.0, 2.0]], (3, 1)))
    ad.backward(ad.sum_all(out))
    np.testing.assert_array_equal(b.grad, [[3.0, 3.0]])


def test_rowsoftmax_symmetry_and_stability():
    tape = Tape()
    out = ad.rowsoftmax(tape.leaf([[0.0, 0.0], [1000.0, 0.0]]))
    np.testing.assert_allclose(out.data[0], [0.5, 0.5])
    assert np.all(np.isfinite(out.data))
    assert out.data[1, 0] == pytest.approx(1.0)
    assert out.data[1, 1] == pytest.approx(0.0, abs=1e-300)


def test_concat_cols_values_and_empty_block():
    tape = Tape()
    out = ad.concat_cols(tape.leaf([[1.0], [2.0]]), tape.leaf([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[1.0, 3.0], [2.0, 4.0]])

    d = tape.leaf(np.arange(6.0).reshape(2, 3))
    unchanged = ad.concat_cols(tape.constant(np.zeros((2, 0))), d)
    np.testing.assert_array_equal(unchanged.data, d.data)


def test_concat_cols_row_mismatch():
    tape = Tape()
    with pytest.raises(DimensionError):
        ad.concat_cols(tape.leaf(np.ones((2, 1))), tape.leaf(np.ones((3, 1))))


def test_concat_rows_splits_gradient():
    tape = Tape()
    a = tape.leaf(np.ones((1, 2)))
    b = tape.leaf(np.ones((2, 2)))
    out = ad.concat_rows(a, b)
    assert out.shape == (3, 2)
    weights = tape.constant(np.arange(6.0).reshape(3, 2))
    ad.backward(ad.sum_all(ad.mul(out, weights)))
    np.testing.assert_array_equal(a.grad, [[0.0, 1.0]])
    np.testing.assert_array_equal(b.grad, [[2.0, 3.0], [4.0, 5.0]])


def test_reductions():
    tape = Tape()
    assert ad.frob_sq(tape.leaf([[2.0, 0.0], [0.0, 0.0]])).item() == 4.0
    p = tape.leaf([[0.3, 0.7], [0.5, 0.5]])
    assert ad.l1_rowdiff_mean(p, p).item() == 0.0
    np.testing.assert_array_equal(ad.mean_rows(tape.leaf([[1.0, 2.0], [3.0, 6.0]])).data, [[2.0, 4.0]])
    assert ad.mean_rows(tape.leaf([[1.0], [3.0]])).shape == (1, 1)
    np.testing.assert_array_equal(ad.rowsum(tape.leaf([[1.0, 2.0], [3.0, 6.0]])).data, [[3.0], [9.0]])


# ── Backward ────────────────────────────────────────────


def test_backward_requires_scalar_root():
    tape = Tape()
    with pytest.raises(ContractError):
        ad.backward(tape.leaf(np.ones((2, 2))))


def test_leaf_used_twice_gets_doubled_gradient():
    tape = Tape()
    x = tape.leaf(np.ones((2, 3)))
    ad.backward(ad.sum_all(ad.add(x, x)))
    np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))


def test_backward_twice_doubles_gradients():
    tape = Tape()
    x = tape.leaf([[1.0, -2.0]])
    root = ad.frob_sq(x)
    ad.backward(root)
    first = x.grad.copy()
    ad.backward(root)
    np.testing.assert_array_equal(x.grad, 2.0 * first)


def test_zero_grad_resets_every_node():
    tape = Tape()
    x = tape.leaf([[1.0, 2.0]])
    ad.backward(ad.frob_sq(ad.scale(x, 3.0)))
    tape.zero_grad()
    assert all(not node.grad.any() for node in tape.nodes)


def test_bind_shares_one_leaf_per_parameter():
    tape = Tape()
    w = np.ones((2, 2))
    assert tape.bind(w) is tape.bind(w)
    np.testing.assert_array_equal(tape.grad_of(np.ones((1, 1))), [[0.0]])


def test_constants_receive_no_gradient_path():
    tape = Tape()
    c = tape.constant([[1.0, 2.0]])
    out = ad.scale(c, 2.0)
    assert not out.requires_grad
    assert out._backward is None


# ── Gradient oracle ─────────────────────────────────────


def test_every_registered_op_has_an_oracle_case():
    assert set(REGISTERED_OPS) == set(gradcheck.OP_CASES)


def test_relative_error_of_identical_vectors_is_zero():
    assert gradcheck.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert gradcheck.relative_error(np.ones(3), np.ones(3)) == 0.0


def test_gradcheck_passes_on_all_ops():
    report = gradcheck.run_gradcheck(cases=20, seed=0, only=list(REGISTERED_OPS))
    assert [entry.name for entry in report.entries] == list(REGISTERED_OPS)
    for entry in report.entries:
        assert entry.cases == 20
        assert entry.worst_error < 1e-4, entry.describe()


def test_gradcheck_passes_on_composites():
    report = gradcheck.run_gradcheck(cases=20, seed=0, only=list(gradcheck.COMPOSITE_CASES))
    assert report.passed, report.table()


def test_gradcheck_catches_sign_flip_in_matmul(monkeypatch):
    original = ad._matmul_backward

    def flipped(a, b, g):
        da, db = original(a, b, g)
        return -da, db

    monkeypatch.setattr(ad, "_matmul_backward", flipped)
    report = gradcheck.run_gradcheck(cases=5, seed=0, only=["matmul"])
    assert not report.passed
    assert report.failures[0].name == "matmul"


def test_wrong_gradient_on_a_small_array_is_not_averaged_away():
    weight = np.ones((10, 10))
    bias = np.ones((1, 3))

    def objective(tape, v):
        big = ad.scale(ad.sum_all(v[0]), 1e4)
        # forward sums the bias, backward drops its gradient
        broken = ad._result(np.array([[v[1].data.sum()]]), (v[1],), "sum_all", lambda g: (np.zeros((1, 3)),))
        return ad.add(big, broken)

    case = gradcheck.GradCase([weight, bias], objective)
    errors = gradcheck.array_errors(case)
    assert errors[0] < 1e-6
    assert errors[1] == pytest.approx(1.0)
    assert gradcheck.check_case(case) == pytest.approx(1.0)


def test_zero_gradient_array_is_not_noise_dominated():
    case = gradcheck.GradCase([np.ones((2, 2)), np.ones((1, 2))], lambda tape, v: ad.sum_all(v[0]))
    assert gradcheck.array_errors(case) == [pytest.approx(0.0, abs=1e-6), 0.0]


def test_l_objective_instances_stay_off_relu_kinks():
    for case_index in range(10):
        rng = np.random.default_rng([0, 99, case_index])
        case = gradcheck._case_l_objective(rng)
        assert all(np.any(b != 0.0) for b in case.arrays[1::2])
        assert gradcheck.check_case(case) < gradcheck.COMPOSITE_TOLERANCE


def test_failed_entry_marks_the_worst_array(monkeypatch):
    original = ad._matmul_backward

    def flipped(a, b, g):
        da, db = original(a, b, g)
        return da, -db

    monkeypatch.setattr(ad, "_matmul_backward", flipped)
    entry = gradcheck.run_gradcheck(cases=3, seed=0, only=["matmul"]).entries[0]
    assert entry.worst_array == 1
    assert entry.describe().rstrip("]").split("[")[1].split()[1].endswith("*")
