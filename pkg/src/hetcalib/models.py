"""Computer models f(x, theta) with first and second theta-derivatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import expr as ex


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelExpr:
    source: str
    ast: ex.Node
    d: int
    q: int

    def __str__(self):
        return ex.to_string(self.ast)


def parse_model(src: str, d: int, q: int) -> ModelExpr:
    return ModelExpr(src, ex.parse(src, d, q), d, q)


def _fd_step(theta):
    return np.maximum(1e-6, 1e-6 * np.abs(theta))


class ComputerModel:
    """An evaluable model ``f(x, theta)``.

    ``func(X, theta)`` must accept ``X`` of shape (k, d) and return shape (k,).
    Missing ``grad``/``hess`` callables are synthesized by central differences.
    """

    def __init__(self, func: Callable, d: int, q: int, theta_bounds,
                 grad: Callable | None = None, hess: Callable | None = None,
                 name: str = "model", expression: ModelExpr | None = None):
        self.func = func
        self.d, self.q = int(d), int(q)
        tb = np.asarray(theta_bounds, dtype=float).reshape(self.q, 2)
        if np.any(tb[:, 0] >= tb[:, 1]):
            raise ModelError("theta bounds must satisfy lo < hi")
        self.theta_bounds = tb
        self._grad, self._hess = grad, hess
        self.name = name
        self.expression = expression

    @classmethod
    def from_expression(cls, src, d: int, q: int, theta_bounds, name: str | None = None):
        me = src if isinstance(src, ModelExpr) else parse_model(src, d, q)
        xs = [f"x{j + 1}" for j in range(d)]
        ts = [f"theta{j + 1}" for j in range(q)]
        grads = [ex.derivative(me.ast, t) for t in ts]
        hess = [[ex.derivative(gi, t) for t in ts] for gi in grads]

        def env(X, theta):
            X = np.atleast_2d(X)
            e = {v: X[:, j] for j, v in enumerate(xs)}
            e.update({t: float(theta[j]) for j, t in enumerate(ts)})
            return e, X.shape[0]

        def full(v, k):
            return np.broadcast_to(np.asarray(v, dtype=float), (k,))

        def f(X, theta):
            e, k = env(X, theta)
            return np.array(full(ex.evaluate(me.ast, e), k))

        def g(X, theta):
            e, k = env(X, theta)
            return np.column_stack([full(ex.evaluate(gi, e), k) for gi in grads])

        def h(X, theta):
            e, k = env(X, theta)
            out = np.empty((k, q, q))
            for i in range(q):
                for j in range(i, q):
                    out[:, i, j] = out[:, j, i] = full(ex.evaluate(hess[i][j], e), k)
            return out

        return cls(f, d, q, theta_bounds, grad=g, hess=h, name=name or str(me), expression=me)

    @property
    def gradient_method(self) -> str:
        if self.expression is not None:
            return "symbolic"
        return "analytic" if self._grad is not None else "finite-difference"

    def _X(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim <= 1:
            X = X.reshape(-1, self.d)
        if X.shape[1] != self.d:
            raise ModelError(f"model expects inputs of dimension {self.d}, got {X.shape[1]}")
        return X

    def _theta(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.q:
            raise ModelError(f"model expects {self.q} calibration parameters, got {theta.size}")
        return theta

    def eval(self, X, theta) -> np.ndarray:
        return np.asarray(self.func(self._X(X), self._theta(theta)), dtype=float)

    def grad_theta(self, X, theta) -> np.ndarray:
        X, theta = self._X(X), self._theta(theta)
        if self._grad is not None:
            return np.asarray(self._grad(X, theta), dtype=float).reshape(X.shape[0], self.q)
        h = _fd_step(theta)
        out = np.empty((X.shape[0], self.q))
        for j in range(self.q):
            e = np.zeros(self.q)
            e[j] = h[j]
            out[:, j] = (self.eval(X, theta + e) - self.eval(X, theta - e)) / (2 * h[j])
        return out

    def hess_theta(self, X, theta) -> np.ndarray:
        X, theta = self._X(X), self._theta(theta)
        if self._hess is not None:
            return np.asarray(self._hess(X, theta), dtype=float).reshape(X.shape[0], self.q, self.q)
        out = np.empty((X.shape[0], self.q, self.q))
        if self._grad is not None:
            h = np.maximum(1e-5, 1e-5 * np.abs(theta))
            for j in range(self.q):
                e = np.zeros(self.q)
                e[j] = h[j]
                out[:, :, j] = (self.grad_theta(X, theta + e) - self.grad_theta(X, theta - e)) / (2 * h[j])
            return 0.5 * (out + out.transpose(0, 2, 1))
        h = np.maximum(1e-4, 1e-4 * np.abs(theta))
        f0 = self.eval(X, theta)
        for i in range(self.q):
            for j in range(i, self.q):
                ei = np.zeros(self.q)
                ei[i] = h[i]
                if i == j:
                    v = (self.eval(X, theta + ei) - 2 * f0 + self.eval(X, theta - ei)) / h[i] ** 2
                else:
                    ej = np.zeros(self.q)
                    ej[j] = h[j]
                    v = (self.eval(X, theta + ei + ej) - self.eval(X, theta + ei - ej)
                         - self.eval(X, theta - ei + ej) + self.eval(X, theta - ei - ej)) / (4 * h[i] * h[j])
                out[:, i, j] = out[:, j, i] = v
        return out

    def __repr__(self):
        return f"ComputerModel({self.name!r}, d={self.d}, q={self.q})"


def eval_model(m: ComputerModel, x, theta) -> float:
    return float(m.eval(np.atleast_1d(x)[None, :], theta)[0])


def grad_theta(m: ComputerModel, x, theta) -> np.ndarray:
    return m.grad_theta(np.atleast_1d(x)[None, :], theta)[0]


BUILTINS = {
    "tuo1d": dict(
        src="exp(x1/10)*sin(x1) - sqrt(theta1^2-theta1+1)*(sin(theta1*x1)+cos(theta1*x1))",
        d=1, q=1, bounds=[[-5.0, 5.0]]),
    "plumlee3p": dict(
        src="theta1 + theta2*x1 + theta3*x2",
        d=2, q=3, bounds=[[-2.0, 2.0], [0.0, 8.0], [-4.0, 4.0]]),
    "growth": dict(src="exp(theta1*x1)", d=1, q=1, bounds=[[0.0, 1.0]]),
}


def builtin_model(name: str) -> ComputerModel:
    try:
        spec = BUILTINS[name]
    except KeyError:
        raise ModelError(f"unknown built-in model {name!r}; choose from {sorted(BUILTINS)}") from None
    return ComputerModel.from_expression(spec["src"], spec["d"], spec["q"], spec["bounds"], name=name)
