"""Latent log-variance field.

Latent values ``delta`` at the n unique locations are smoothed into
log-variances by a GP predictive mean whose nugget is scaled by replication::

    log Lambda = Kg (Kg + g A^{-1})^{-1} delta
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import KernelSpec, kernel_matrix

LOG_VARIANCE_FLOOR = 1e-8


class NoiseFieldError(ArithmeticError):
    pass


def spd_factor(M, what="matrix", ladder=(0.0, 1e-12, 1e-10, 1e-8, 1e-6)):
    """Cholesky with a diagonal jitter ladder relative to the mean diagonal.

    Returns ``(cho, jitter)``; raises ``LinAlgError`` when every rung fails.
    """
    scale = float(np.mean(np.diag(M)))
    if not np.isfinite(scale) or scale <= 0:
        raise LinAlgError(f"{what} has a non-positive diagonal")
    n = M.shape[0]
    for jit in ladder:
        try:
            return cho_factor(M + jit * scale * np.eye(n), lower=True), jit
        except LinAlgError:
            continue
    raise LinAlgError(f"{what} is not positive definite after jitter")


def cho_logdet(cho) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cho[0]))))


@dataclass(frozen=True, eq=False)
class NoiseField:
    """Latent variables with the pieces needed to smooth and predict them.

    ``Gamma_g = Kg + g * diag(1 / a)`` is factorized once at construction.
    """

    delta: np.ndarray
    kg_spec: KernelSpec
    g: float
    X: np.ndarray
    a: np.ndarray
    Kg: np.ndarray
    cho: tuple

    @classmethod
    def build(cls, X, a, delta, kg_spec: KernelSpec, g: float, Kg=None) -> "NoiseField":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.asarray(a, dtype=float)
        delta = np.asarray(delta, dtype=float).ravel()
        if not (np.isfinite(g) and g > 0):
            raise ValueError(f"nugget g must be positive, got {g}")
        if delta.size != X.shape[0] or a.size != X.shape[0]:
            raise ValueError("delta, a and X must share the number of unique locations")
        if Kg is None:
            Kg = kernel_matrix(kg_spec, X)
        try:
            cho, _ = spd_factor(Kg + np.diag(g / a), "Gamma_g")
        except LinAlgError as exc:
            raise NoiseFieldError(str(exc)) from exc
        return cls(delta, kg_spec, float(g), X, a, Kg, cho)

    @property
    def n(self) -> int:
        return self.delta.size

    @property
    def Gamma_g(self) -> np.ndarray:
        return self.Kg + np.diag(self.g / self.a)

    def solve(self, b):
        return cho_solve(self.cho, b)

    @property
    def alpha(self) -> np.ndarray:
        """``Gamma_g^{-1} delta``."""
        return self.solve(self.delta)

    @property
    def nu_g(self) -> float:
        """Plug-in scale ``delta^T Gamma_g^{-1} delta / n``."""
        return float(self.delta @ self.alpha) / self.n

    def logdet(self) -> float:
        return cho_logdet(self.cho)


def smooth_log_lambda(field: NoiseField, a=None) -> np.ndarray:
    """Smoothed log-variances at the unique locations.

    ``a`` defaults to the replicate counts the field was built with.
    """
    if a is not None and not np.array_equal(np.asarray(a, dtype=float), field.a):
        field = NoiseField.build(field.X, a, field.delta, field.kg_spec, field.g, Kg=field.Kg)
    if not np.any(field.delta):
        return np.zeros(field.n)
    return field.Kg @ field.alpha


def predict_log_lambda(field: NoiseField, x) -> np.ndarray | float:
    """Log-variance multiplier at new input(s); scalar for a single point."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and x.size == field.X.shape[1]
    Xn = x.reshape(-1, field.X.shape[1])
    out = kernel_matrix(field.kg_spec, Xn, field.X) @ field.alpha
    return float(out[0]) if single else out


def initial_delta(s2, a, nu0: float) -> np.ndarray:
    """Empirical log-variance ratios; singletons start at zero."""
    s2 = np.asarray(s2, dtype=float)
    a = np.asarray(a)
    out = np.log(np.maximum(s2, LOG_VARIANCE_FLOOR) / nu0)
    out[a < 2] = 0.0
    return out
