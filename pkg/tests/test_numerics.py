import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from insider_stream.numerics import (
    AdamState,
    NonFiniteGradient,
    ShapeError,
    adam_step,
    add_bias,
    elementwise_mul,
    gradient_check,
    log_softmax,
    matmul,
    sigmoid,
    softmax,
)


def test_sigmoid_at_zero():
    assert sigmoid(0.0) == 0.5


def test_softmax_uniform():
    assert_allclose(softmax(np.zeros(4)), [0.25] * 4, rtol=0, atol=0)


def test_tanh_and_sigmoid_saturate_without_nan():
    x = np.array([-1e308, -1e4, 1e4, 1e308])
    assert_array_equal(np.tanh(x), [-1, -1, 1, 1])
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert_array_equal(s, [0, 0, 1, 1])


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=8))
def test_softmax_normalized(xs):
    p = softmax(np.array(xs))
    assert abs(p.sum() - 1.0) < 1e-12
    assert_allclose(np.exp(log_softmax(np.array(xs))), p, atol=1e-12)


def test_shape_errors():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        add_bias(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError):
        elementwise_mul(np.ones(3), np.ones(4))


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_two_steps_constant_gradient():
    # hand iteration: bias correction makes m_hat = g and v_hat = g^2 at every step,
    # so each step moves by lr * |g| / (|g| + eps)
    p = {"w": np.array([1.0, 1.0])}
    state = AdamState(learning_rate=0.01)
    g = {"w": np.array([0.5, -0.5])}
    adam_step(p, g, state)
    adam_step(p, g, state)
    assert_allclose(p["w"], [0.9800000004, 1.0199999996], rtol=0, atol=1e-12)
    assert state.step == 2


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(1)
        p = {"w": rng.normal(size=5)}
        s = AdamState()
        for _ in range(10):
            adam_step(p, {"w": rng.normal(size=5)}, s)
        return p["w"]
    assert_array_equal(run(), run())


def test_adam_rejects_non_finite_before_updating():
    p = {"a": np.ones(2), "b": np.ones(2)}
    s = AdamState()
    with pytest.raises(NonFiniteGradient):
        adam_step(p, {"a": np.ones(2), "b": np.array([np.nan, 0.0])}, s)
    assert_array_equal(p["a"], 1.0)
    assert s.step == 0


def _quadratic(a):
    def loss(params):
        w = params["w"]
        return float(0.5 * w @ a @ w), {"w": a @ w}
    return loss


def test_gradient_check_quadratic_exact():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(4, 4))
    a = b @ b.T
    report = gradient_check(_quadratic(a), {"w": rng.normal(size=4)})
    assert report.max_error < 1e-7


def test_gradient_check_flags_corrupted_gradient():
    a = np.eye(3)

    def bad(params):
        loss, g = _quadratic(a)(params)
        return loss, {"w": g["w"] * 1.01}
    report = gradient_check(bad, {"w": np.array([1.0, 2.0, 3.0])})
    assert not report.passed
    assert report.worst_block() == "w"
