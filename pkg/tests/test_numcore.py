import numpy as np
import pytest

from pacclearn import numcore as nc
from pacclearn.errors import NumericOverflowError


def test_grad_of_sum_of_squares():
    g = nc.grad(lambda t: nc.sum(nc.square(t)), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_grad_of_constant_is_zero():
    g = nc.grad(lambda t: nc.constant(7.0), np.zeros(3))
    np.testing.assert_array_equal(g, np.zeros(3))


def test_finite_diff_on_quadratic():
    g = nc.finite_diff_grad(lambda t: float(t[0] ** 2), np.array([1.0]), h=1e-5)
    assert abs(g[0] - 2.0) <= 1e-9


def test_finite_diff_constant_and_bad_step():
    np.testing.assert_array_equal(nc.finite_diff_grad(lambda t: 3.0, np.ones(4)), np.zeros(4))
    with pytest.raises(ValueError):
        nc.finite_diff_grad(lambda t: 3.0, np.ones(2), h=0.0)


def test_construction_rejects_nonfinite():
    with pytest.raises(NumericOverflowError):
        nc.Var(np.array([1.0, np.nan]))
    with pytest.raises(NumericOverflowError):
        nc.as_array([np.inf])


def test_overflow_names_operation():
    with pytest.raises(NumericOverflowError) as info:
        nc.grad(lambda t: nc.sum(nc.exp(t)), np.array([1000.0]))
    assert info.value.op == "exp"


def test_log_of_nonpositive_fails():
    with pytest.raises(NumericOverflowError):
        nc.log(nc.constant(np.array([0.0])))


def _fd_check(f, theta, tol=1e-6):
    g = nc.grad(f, theta)
    fd = nc.finite_diff_grad(lambda t: float(f(t).value), theta)
    err = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
    assert err <= tol, err


@pytest.mark.parametrize(
    "name, f",
    [
        ("matmul", lambda t: nc.sum(nc.sigmoid(t.reshape((2, 3)) @ np.arange(3.0)))),
        ("softmax", lambda t: nc.sum(nc.log(nc.softmax(t.reshape((2, 3)), axis=1)) * np.arange(6.0).reshape(2, 3))),
        ("div", lambda t: nc.sum(t / (nc.square(t) + 1.0))),
        ("mean", lambda t: nc.mean(nc.exp(t * 0.3))),
        ("transpose", lambda t: nc.sum(t.reshape((2, 3)).T @ t.reshape((2, 3)))),
        ("take_labels", lambda t: nc.sum(nc.take_labels(nc.softmax(t.reshape((3, 2)), axis=1), np.array([0, 1, 1])))),
        ("clip", lambda t: nc.sum(nc.clip(t, -0.5, 0.5) * 2.0)),
        ("maximum", lambda t: nc.sum(nc.maximum(t, 0.05) * t)),
        ("relu", lambda t: nc.sum(nc.relu(t) * t)),
        ("broadcast", lambda t: nc.sum(t.reshape((2, 3)) * t[:3])),
    ],
)
def test_op_gradients_match_finite_differences(name, f):
    rng = np.random.default_rng(0)
    theta = rng.normal(size=6)
    theta[np.abs(theta) < 0.1] += 0.3  # keep kinks of clip/relu/maximum away from the probe
    theta[np.abs(np.abs(theta) - 0.5) < 0.05] += 0.2
    theta[np.abs(theta - 0.05) < 0.05] += 0.2
    _fd_check(f, theta)


def test_linearity_of_grad():
    rng = np.random.default_rng(1)
    theta = rng.normal(size=5)
    f = lambda t: nc.sum(nc.sigmoid(t) * t)
    g = lambda t: nc.sum(nc.exp(t * 0.5))
    a, b = 2.5, -1.25
    lhs = nc.grad(lambda t: f(t) * a + g(t) * b, theta)
    rhs = a * nc.grad(f, theta) + b * nc.grad(g, theta)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_grad_is_bit_identical_on_repeat():
    rng = np.random.default_rng(2)
    theta = rng.normal(size=8)
    f = lambda t: nc.sum(nc.softmax(t.reshape((2, 4)), axis=1) * np.arange(8.0).reshape(2, 4))
    assert nc.grad(f, theta).tobytes() == nc.grad(f, theta).tobytes()


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        nc.grad(lambda t: t * 2.0, np.ones(3))


def test_shared_subexpression_accumulates():
    # y = x*x + x uses x three times; d/dx = 2x + 1
    g = nc.grad(lambda t: nc.sum(t * t + t), np.array([3.0]))
    np.testing.assert_array_equal(g, [7.0])
