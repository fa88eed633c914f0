import numpy as np
import pytest

from hetcalib.models import BUILTINS, ComputerModel, ModelError, builtin_model


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtin_gradients_match_central_differences(name):
    m = builtin_model(name)
    rng = np.random.default_rng(0)
    X = rng.random((9, m.d)) * 3
    lo, hi = m.theta_bounds[:, 0], m.theta_bounds[:, 1]
    theta = lo + (hi - lo) * rng.random(m.q)
    G = m.grad_theta(X, theta)
    H = m.hess_theta(X, theta)
    for j in range(m.q):
        e = np.zeros(m.q)
        e[j] = 1e-6
        np.testing.assert_allclose(G[:, j], (m.eval(X, theta + e) - m.eval(X, theta - e)) / 2e-6,
                                   rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(H[:, :, j], (m.grad_theta(X, theta + e) - m.grad_theta(X, theta - e)) / 2e-6,
                                   rtol=1e-5, atol=1e-7)


def test_tuo_model_values():
    m = builtin_model("tuo1d")
    x = np.array([0.0, 1.0, 4.0])
    th = -0.3
    want = np.exp(x / 10) * np.sin(x) - np.sqrt(th ** 2 - th + 1) * (np.sin(th * x) + np.cos(th * x))
    np.testing.assert_allclose(m.eval(x, th), want)


def test_callable_model_falls_back_to_differences():
    m = ComputerModel(lambda X, t: t[0] * X[:, 0] ** 2 + np.exp(t[1] * X[:, 0]), 1, 2, [[-1, 1], [-1, 1]])
    assert m.gradient_method == "finite-difference"
    X = np.linspace(0, 1, 5)[:, None]
    t = np.array([0.2, 0.5])
    np.testing.assert_allclose(m.grad_theta(X, t), np.column_stack([X[:, 0] ** 2, X[:, 0] * np.exp(0.5 * X[:, 0])]),
                               rtol=1e-7)
    H = m.hess_theta(X, t)
    np.testing.assert_allclose(H[:, 1, 1], X[:, 0] ** 2 * np.exp(0.5 * X[:, 0]), rtol=1e-4)
    np.testing.assert_allclose(H[:, 0, 1], 0.0, atol=1e-6)


def test_expression_model_is_symbolic():
    m = ComputerModel.from_expression("theta1 * x1 + theta2", 1, 2, [[0, 1], [0, 1]])
    assert m.gradient_method == "symbolic"
    np.testing.assert_allclose(m.grad_theta([[2.0]], [0.1, 0.2]), [[2.0, 1.0]])


@pytest.mark.parametrize("bad", [
    lambda: builtin_model("nope"),
    lambda: ComputerModel.from_expression("theta1 * x1", 1, 1, [[1.0, 0.0]]),
    lambda: builtin_model("tuo1d").eval(np.zeros((2, 2)), [0.0]),
    lambda: builtin_model("tuo1d").eval([0.0], [0.0, 1.0]),
])
def test_errors(bad):
    with pytest.raises(ModelError):
        bad()
