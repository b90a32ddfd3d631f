"""Tensor primitives: forward values against hand computations, gradients
against central finite differences, and tape bookkeeping rules."""

import numpy as np
import pytest

from survseq.errors import AllMasked, NotScalarLoss, ShapeMismatch
from survseq.numerics import (
    Parameter,
    Tape,
    Tensor,
    add,
    finite_difference_check,
    layernorm_lastdim,
    log,
    masked_mean,
    matmul,
    mean_all,
    mul,
    relu,
    scale,
    sigmoid,
    softmax_lastdim,
    softplus,
    square,
    sub,
    sum_all,
    transpose_last2,
)


def test_square_gradient_at_three():
    # d(w^2)/dw at w=3 is exactly 6
    w = Parameter(np.array([3.0]), "w")
    with Tape() as tape:
        loss = sum_all(square(w))
    tape.backward(loss)
    assert w.grad[0] == pytest.approx(6.0, abs=1e-12)


def test_matmul_forward_matches_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    out = matmul(Tensor(a), Tensor(b))
    assert np.array_equal(out.data, a @ b)


def test_softmax_of_equal_scores_is_uniform():
    out = softmax_lastdim(Tensor(np.array([0.0, 0.0])))
    assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    out = softmax_lastdim(Tensor(rng.normal(size=(5, 7)) * 10.0))
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_layernorm_two_point_row():
    # mean 2, variance 1: [1, 3] maps to about [-1, +1] (eps shifts 5e-6)
    out = layernorm_lastdim(Tensor(np.array([1.0, 3.0])))
    assert np.allclose(out.data, [-1.0, 1.0], atol=1e-5)


def test_layernorm_rows_standardized():
    rng = np.random.default_rng(2)
    out = layernorm_lastdim(Tensor(rng.normal(size=(4, 16)) * 3.0 + 5.0))
    assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(out.data.var(axis=-1), 1.0, atol=1e-4)


def test_sigmoid_softplus_log_values():
    assert sigmoid(Tensor(np.array([0.0]))).data[0] == pytest.approx(0.5)
    assert softplus(Tensor(np.array([0.0]))).data[0] == pytest.approx(
        np.log(2.0), abs=1e-12)
    # softplus linear tail stays finite at extreme logits
    assert softplus(Tensor(np.array([500.0]))).data[0] == pytest.approx(500.0)
    assert log(Tensor(np.array([np.e]))).data[0] == pytest.approx(1.0)


def test_masked_mean_ignores_masked_rows():
    x = Tensor(np.array([[1.0, 2.0], [9.0, 9.0], [3.0, 4.0]]))
    mask = np.array([1.0, 0.0, 1.0])
    out = masked_mean(x, Tensor(mask))
    assert np.allclose(out.data, [2.0, 3.0], atol=1e-15)


def test_masked_mean_all_masked_raises():
    with pytest.raises(AllMasked):
        masked_mean(Tensor(np.ones((2, 3))), Tensor(np.zeros(2)))


def test_add_shape_mismatch_raises():
    with pytest.raises(ShapeMismatch):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def _fd(build, params, tol=1e-6):
    err = finite_difference_check(build, params)
    assert err < tol, f"finite-difference mismatch {err:.3e}"


def test_gradients_matmul_add():
    rng = np.random.default_rng(3)
    w = Parameter(rng.normal(size=(4, 3)), "w")
    b = Parameter(rng.normal(size=3), "b")
    x = rng.normal(size=(5, 4))

    def build():
        return sum_all(square(add(matmul(Tensor(x), w), b)))

    _fd(build, [w, b])


def test_gradients_broadcast_add():
    rng = np.random.default_rng(4)
    a = Parameter(rng.normal(size=(2, 3, 4)), "a")
    b = Parameter(rng.normal(size=4), "b")

    def build():
        return sum_all(square(add(a, b)))

    _fd(build, [a, b])


def test_gradients_elementwise_chain():
    rng = np.random.default_rng(5)
    # keep relu inputs away from the kink
    w = Parameter(rng.normal(size=(3, 3)) + 3.0, "w")

    def build():
        h = relu(w)
        h = sigmoid(h)
        h = softplus(h)
        h = mul(h, w)
        h = sub(h, scale(w, 0.25))
        return mean_all(square(h))

    _fd(build, [w])


def test_gradients_log():
    rng = np.random.default_rng(6)
    w = Parameter(rng.uniform(0.5, 2.0, size=(4,)), "w")

    def build():
        return sum_all(square(log(w)))

    _fd(build, [w])


def test_gradients_softmax_layernorm():
    rng = np.random.default_rng(7)
    w = Parameter(rng.normal(size=(3, 5)), "w")

    def build():
        h = softmax_lastdim(w)
        h = layernorm_lastdim(add(h, w))
        return sum_all(square(h))

    # doubly-normalized composition amplifies central-difference truncation
    _fd(build, [w], tol=5e-5)


def test_gradients_masked_mean_transpose():
    rng = np.random.default_rng(8)
    w = Parameter(rng.normal(size=(4, 3)), "w")
    mask = np.array([1.0, 1.0, 0.0, 1.0])

    def build():
        h = transpose_last2(matmul(w, transpose_last2(w)))
        return sum_all(square(masked_mean(h, Tensor(mask))))

    _fd(build, [w])


def test_backward_requires_scalar_loss():
    w = Parameter(np.ones(3), "w")
    with Tape() as tape:
        out = square(w)
    with pytest.raises(NotScalarLoss):
        tape.backward(out)


def test_tape_single_replay():
    w = Parameter(np.array([2.0]), "w")
    with Tape() as tape:
        loss = sum_all(square(w))
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)


def test_no_active_tape_means_no_recording():
    w = Parameter(np.array([2.0]), "w")
    square(w)  # outside any tape: pure numpy, no graph
    with Tape() as tape:
        pass
    assert len(tape) == 0
    assert np.all(w.grad == 0.0)


def test_gradients_accumulate_when_param_reused():
    w = Parameter(np.array([2.0]), "w")
    with Tape() as tape:
        loss = sum_all(mul(w, w))  # both factors are w: d/dw = 2w
    tape.backward(loss)
    assert w.grad[0] == pytest.approx(4.0, abs=1e-12)
