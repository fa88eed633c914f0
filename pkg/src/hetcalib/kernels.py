"""Unit-variance stationary kernels with per-dimension lengthscales.

Both families satisfy ``k(x, x) = 1``; the process scale lives elsewhere.

    matern52:  k = (1 + s + s**2 / 3) exp(-s),   s = sqrt(5) * r
    gaussian:  k = exp(-r**2 / 2)

with ``r = ||(x - y) / phi||``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("matern52", "gaussian")
SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    family: str
    lengthscales: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty vector")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)

    @property
    def d(self) -> int:
        return self.lengthscales.size

    def with_lengthscales(self, ls) -> "KernelSpec":
        return KernelSpec(self.family, ls)


def _as2d(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, d) if d > 1 else X[:, None]
    if X.shape[1] != d:
        raise ValueError(f"inputs have dimension {X.shape[1]}, kernel expects {d}")
    return X


def sqdiff(X, Y=None) -> np.ndarray:
    """Per-dimension squared differences, shape (d, n, m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    return (X.T[:, :, None] - Y.T[:, None, :]) ** 2


def _profile(family, ls, D2, order):
    """Kernel values and lengthscale derivatives from squared differences.

    order 0 -> K; 1 -> (K, dK) with dK (d, n, m); 2 -> (K, dK, d2K) with d2K (d, d, n, m).
    """
    # u_j = (x_j - y_j)^2 / phi_j^3, so that r^2 = sum_j phi_j * u_j.
    # In-place arithmetic: these arrays are m x m for the Monte Carlo basis.
    r2 = D2[0] / ls[0] ** 2
    for j in range(1, ls.size):
        r2 += D2[j] / ls[j] ** 2
    if family == "gaussian":
        r2 *= -0.5
        K = np.exp(r2, out=r2)
        if order == 0:
            return K
        G = K
    else:
        s = np.sqrt(r2, out=r2)
        s *= SQRT5
        e = np.exp(-s)
        K = s * s
        K *= 1.0 / 3.0
        K += s
        K += 1.0
        K *= e
        if order == 0:
            return K
        s += 1.0
        s *= e
        s *= 5.0 / 3.0
        G = s
    dK = np.empty_like(D2)
    for j in range(ls.size):
        np.multiply(G, D2[j], out=dK[j])
        dK[j] *= 1.0 / ls[j] ** 3
    if order == 1:
        return K, dK
    u = D2 / ls[:, None, None] ** 3
    if family == "gaussian":
        H = K[None, None] * u[:, None] * u[None, :]
    else:
        H = (25.0 / 3.0) * e[None, None] * u[:, None] * u[None, :]
    for j in range(ls.size):
        H[j, j] -= 3.0 * G * D2[j] / ls[j] ** 4
    return K, dK, H


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.size != spec.d or y.size != spec.d:
        raise ValueError("input dimension does not match the kernel")
    return float(_profile(spec.family, spec.lengthscales, sqdiff(x[None], y[None]), 0)[0, 0])


def kernel_matrix(spec: KernelSpec, X, Y=None, D2=None) -> np.ndarray:
    """Cross-covariance matrix ``k(X_i, Y_j)``; symmetric with unit diagonal when ``Y`` is None.

    ``D2`` may carry precomputed :func:`sqdiff` output to skip the distance pass.
    """
    if D2 is None:
        X = _as2d(X, spec.d)
        if X.shape[0] == 0:
            raise ValueError("empty input set")
        D2 = sqdiff(X, None if Y is None else _as2d(Y, spec.d))
    return _profile(spec.family, spec.lengthscales, D2, 0)


def kernel_grad_lengthscale(spec: KernelSpec, X, Y=None, D2=None):
    """Return ``(K, dK)`` with ``dK[j] = dK/dphi_j``."""
    if D2 is None:
        X = _as2d(X, spec.d)
        D2 = sqdiff(X, None if Y is None else _as2d(Y, spec.d))
    return _profile(spec.family, spec.lengthscales, D2, 1)


def kernel_hess_lengthscale(spec: KernelSpec, X, Y=None, D2=None):
    """Return ``(K, dK, d2K)`` with ``d2K[i, j] = d^2 K / dphi_i dphi_j``."""
    if D2 is None:
        X = _as2d(X, spec.d)
        D2 = sqdiff(X, None if Y is None else _as2d(Y, spec.d))
    return _profile(spec.family, spec.lengthscales, D2, 2)


def kernel_grad_input(spec: KernelSpec, x, Y) -> np.ndarray:
    """Gradient of ``k(x, Y_j)`` with respect to ``x``, shape (m, d)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Y = _as2d(Y, spec.d)
    diff = (x[None, :] - Y) / spec.lengthscales ** 2
    r2 = np.sum(((x[None, :] - Y) / spec.lengthscales) ** 2, axis=1)
    if spec.family == "gaussian":
        return -np.exp(-0.5 * r2)[:, None] * diff
    s = SQRT5 * np.sqrt(r2)
    # dk/d(r^2) = -(5/6)(1 + s) exp(-s)
    return -(5.0 / 3.0) * ((1.0 + s) * np.exp(-s))[:, None] * diff
