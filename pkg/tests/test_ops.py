from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
import numpy as np
import pytest

from apla.errors import DimensionError
from apla.ops import (cross_entropy, gelu, gelu_forward, gelu_grad, layernorm, layernorm_backward,
                      layernorm_forward, linear, matmul, softmax_rows, softmax_rows_backward)
from apla.rng import Rng

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_equals_ascending_python_sum():
    a = Rng(0).normal_array((5, 7))
    b = Rng(1).normal_array((7, 3))
    out = matmul(a, b)
    for i in range(5):
        for j in range(3):
            acc = 0.0
            for t in range(7):
                acc += a[i, t] * b[t, j]
            assert out[i, j] == acc


def test_matmul_batched_and_close_to_numpy():
    a = Rng(2).normal_array((3, 4, 6))
    b = Rng(3).normal_array((3, 6, 5))
    np.testing.assert_allclose(matmul(a, b), a @ b, rtol=1e-12, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(2, 9), st.data())
def test_matmul_column_slice_consistency(m, k, n, data):
    a = data.draw(arrays(np.float64, (m, k), elements=finite))
    b = data.draw(arrays(np.float64, (k, n), elements=finite))
    cols = sorted(data.draw(st.sets(st.integers(0, n - 1), min_size=1)))
    assert np.array_equal(matmul(a, b[:, cols]), matmul(a, b)[:, cols])


def test_linear_over_leading_axes():
    x = Rng(4).normal_array((2, 3, 4))
    w = Rng(5).normal_array((4, 6))
    b = Rng(6).normal_array(6)
    np.testing.assert_allclose(linear(x, w, b), x @ w + b, rtol=1e-12, atol=1e-12)


def test_softmax_row_sums():
    x = Rng(7).normal_array((50, 9)) * 30
    assert np.max(np.abs(softmax_rows(x).sum(axis=-1) - 1.0)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(softmax_rows(x + c), softmax_rows(x), rtol=1e-9, atol=1e-12)


def test_softmax_extreme_inputs_are_finite():
    p = softmax_rows(np.array([[1000.0, -1000.0, 0.0]]))
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0


def test_softmax_backward_matches_finite_difference():
    x = Rng(8).normal_array((2, 4))
    dp = Rng(9).normal_array((2, 4))
    g = softmax_rows_backward(softmax_rows(x), dp)
    h = 1e-6
    for i in range(2):
        for j in range(4):
            e = np.zeros_like(x)
            e[i, j] = h
            fd = ((softmax_rows(x + e) - softmax_rows(x - e)) * dp).sum() / (2 * h)
            assert abs(g[i, j] - fd) < 1e-8


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 8), elements=st.floats(-1e3, 1e3)))
def test_layernorm_mean_var_contract(x):
    if np.any(x.std(axis=-1) < 1e-3):
        return
    y = layernorm(x, np.ones(8), np.zeros(8), eps=0.0)
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-9)


def test_layernorm_constant_row_is_beta():
    y = layernorm(np.full((1, 4), 3.0), np.full(4, 2.0), np.arange(4.0), eps=1e-6)
    np.testing.assert_allclose(y[0], np.arange(4.0))


def test_layernorm_backward_matches_finite_difference():
    x = Rng(10).normal_array((3, 6))
    g = 1 + 0.3 * Rng(11).normal_array(6)
    b = Rng(12).normal_array(6)
    dy = Rng(13).normal_array((3, 6))
    _, cache = layernorm_forward(x, g, b, 1e-6)
    dx, dg, db = layernorm_backward(dy, g, cache)
    h = 1e-6

    def f(x_, g_, b_):
        return (layernorm(x_, g_, b_, 1e-6) * dy).sum()

    for i in range(3):
        for j in range(6):
            e = np.zeros_like(x)
            e[i, j] = h
            assert abs(dx[i, j] - (f(x + e, g, b) - f(x - e, g, b)) / (2 * h)) < 1e-7
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        assert abs(dg[j] - (f(x, g + e, b) - f(x, g - e, b)) / (2 * h)) < 1e-7
    np.testing.assert_allclose(db, dy.sum(axis=0))


def test_gelu_known_values():
    assert gelu(np.array([0.0]))[0] == 0.0
    assert abs(gelu(np.array([1.0]))[0] - 0.8411919906082768) < 1e-15
    np.testing.assert_allclose(gelu(np.array([-30.0, 30.0])), [0.0, 30.0], atol=1e-300)


def test_gelu_grad_matches_finite_difference():
    x = np.linspace(-5, 5, 41)
    h = 1e-6
    fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
    np.testing.assert_allclose(gelu_grad(x), fd, atol=1e-8)
    assert np.array_equal(gelu_grad(x, gelu_forward(x)[1]), gelu_grad(x))


def test_cross_entropy_uniform_logits():
    loss, d = cross_entropy(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
    assert abs(loss - np.log(5)) < 1e-15
    np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-16)


def test_cross_entropy_gradient():
    z = Rng(14).normal_array((3, 4))
    y = np.array([2, 0, 3])
    _, d = cross_entropy(z, y)
    h = 1e-6
    for i in range(3):
        for j in range(4):
            e = np.zeros_like(z)
            e[i, j] = h
            fd = (cross_entropy(z + e, y)[0] - cross_entropy(z - e, y)[0]) / (2 * h)
            assert abs(d[i, j] - fd) < 1e-9
