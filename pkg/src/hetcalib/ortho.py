"""Orthogonal discrepancy kernel via Monte Carlo integration.

With m uniform samples xi, ``F`` the (m, q) matrix of df/dtheta at xi,
``W = k0(xi, xi)`` and ``w(x) = k0(xi, x)``::

    k(x, x') = k0(x, x') - w(x)^T F (F^T W F)^{-1} F^T w(x')

By construction ``F^T k(xi, x) = 0`` for every ``x``: the discrepancy is
orthogonal (in the sample average) to every direction the model can move in.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .kernels import KernelSpec, kernel_grad_lengthscale, kernel_matrix, sqdiff
from .models import ComputerModel

MIN_SAMPLES_PER_PARAM = 10
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class OrthoError(ArithmeticError):
    """F^T W F could not be factorized; the orthogonalization is not identifiable."""


@dataclass(frozen=True, eq=False)
class MCPoints:
    """Fixed Monte Carlo sample over the input box, with cached squared differences."""

    xi: np.ndarray
    seed: int | None
    D2: np.ndarray

    @property
    def m(self) -> int:
        return self.xi.shape[0]


def sample_points(bounds, m: int, seed: int | None = None) -> MCPoints:
    bounds = np.asarray(bounds, dtype=float)
    if not np.all(np.isfinite(bounds)):
        raise ValueError("Monte Carlo sampling needs finite bounds")
    rng = np.random.default_rng(seed)
    lo, hi = bounds[:, 0], bounds[:, 1]
    xi = lo + (hi - lo) * rng.random((m, bounds.shape[0]))
    return MCPoints(xi, seed, sqdiff(xi))


@dataclass(eq=False)
class OrthoBasis:
    points: MCPoints
    k0: KernelSpec
    theta: np.ndarray
    F: np.ndarray
    WF: np.ndarray
    P: np.ndarray
    P_cho: tuple
    jitter: float
    model: ComputerModel
    dWF: np.ndarray | None = None  # (d, m, q): dW/dphi_j @ F

    @property
    def W(self) -> np.ndarray:
        """The m x m base-kernel matrix (not kept during fitting)."""
        return kernel_matrix(self.k0, None, D2=self.points.D2)

    @property
    def xi(self):
        return self.points.xi

    @property
    def seed(self):
        return self.points.seed

    def solve(self, B):
        return cho_solve(self.P_cho, B)


def _factor(P):
    scale = float(np.mean(np.diag(P))) if P.size else 0.0
    if not np.isfinite(scale) or scale <= 0:
        raise OrthoError("F^T W F is zero: the model gradient vanishes on the Monte Carlo sample")
    for jit in JITTER_LADDER:
        try:
            Pj = P + jit * scale * np.eye(P.shape[0])
            cho = cho_factor(Pj, lower=True)
        except LinAlgError:
            continue
        d = np.diag(cho[0])
        if np.min(d) ** 2 > 1e-14 * scale:
            return Pj, cho, jit
    raise OrthoError("F^T W F is numerically singular beyond jitter rescue")


def build_basis(model: ComputerModel, theta, k0: KernelSpec, domain_bounds=None, m: int = 1000,
                seed: int | None = None, points: MCPoints | None = None, with_W_grad=False):
    """Evaluate the orthogonalization pieces at ``theta`` and the lengthscales of ``k0``.

    Pass ``points`` to reuse a fixed sample (the optimizer does this so that the
    likelihood is a deterministic function of the parameters).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if points is None:
        if m < model.q:
            raise ValueError(f"need at least q={model.q} Monte Carlo samples, got {m}")
        points = sample_points(domain_bounds, m, seed)
    if points.m < MIN_SAMPLES_PER_PARAM * model.q:
        warnings.warn(f"only {points.m} Monte Carlo samples for q={model.q}; "
                      "F^T W F may be poorly conditioned", RuntimeWarning, stacklevel=2)
    try:
        F = model.grad_theta(points.xi, theta)
    except ArithmeticError as exc:
        raise OrthoError(f"model gradient failed on the Monte Carlo sample: {exc}") from exc
    WF, dWF = _kernel_times(k0, points.D2, F, with_W_grad)
    P, cho, jit = _factor(F.T @ WF)
    return OrthoBasis(points, k0, theta, F, WF, P, cho, jit, model, dWF)


def _kernel_times(k0, D2, F, grad, rows=32):
    # W @ F (and dW_j @ F) from the upper block triangle of the symmetric W;
    # W itself is never stored, which keeps the working set in cache
    m = D2.shape[1]
    WF = np.zeros_like(F)
    dWF = np.zeros((k0.d,) + F.shape) if grad else None
    for lo in range(0, m, rows):
        hi = min(lo + rows, m)
        blk = D2[:, lo:hi, lo:]
        if grad:
            Kb, dKb = kernel_grad_lengthscale(k0, None, D2=blk)
            for j in range(k0.d):
                dWF[j, lo:hi] += dKb[j] @ F[lo:]
                dWF[j, hi:] += dKb[j][:, hi - lo:].T @ F[lo:hi]
        else:
            Kb = kernel_matrix(k0, None, D2=blk)
        WF[lo:hi] += Kb @ F[lo:]
        WF[hi:] += Kb[:, hi - lo:].T @ F[lo:hi]
    return WF, dWF


def ortho_kernel_matrix(basis: OrthoBasis, X, Y=None) -> np.ndarray:
    """``K_n`` at inputs ``X`` (or the cross-covariance with ``Y``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    wX = kernel_matrix(basis.k0, basis.xi, X)
    CX = basis.F.T @ wX
    if Y is None:
        return kernel_matrix(basis.k0, X) - CX.T @ basis.solve(CX)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    CY = basis.F.T @ kernel_matrix(basis.k0, basis.xi, Y)
    return kernel_matrix(basis.k0, X, Y) - CX.T @ basis.solve(CY)


def ortho_kernel_derivs(basis: OrthoBasis, X):
    """``K_n`` with its derivatives, shapes (n, n), (q, n, n), (d, n, n).

    ``basis`` must have been built with ``with_W_grad=True``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k0 = basis.k0
    K0, dK0 = kernel_grad_lengthscale(k0, X)
    w, dw = kernel_grad_lengthscale(k0, basis.xi, X)
    F, WF = basis.F, basis.WF
    C = F.T @ w
    A = basis.solve(C)
    K = K0 - C.T @ A

    q, d, n = F.shape[1], k0.d, X.shape[0]
    H = basis.model.hess_theta(basis.xi, basis.theta)
    dK_theta = np.empty((q, n, n))
    for j in range(q):
        Fj = H[:, :, j]
        Cj = Fj.T @ w
        Pj = Fj.T @ WF
        Pj = Pj + Pj.T
        T = Cj.T @ A
        dK_theta[j] = -(T + T.T) + A.T @ Pj @ A

    if basis.dWF is None:
        raise ValueError("basis lacks dW; build it with with_W_grad=True")
    dK_phi = np.empty((d, n, n))
    for j in range(d):
        Cj = F.T @ dw[j]
        Pj = F.T @ basis.dWF[j]
        T = Cj.T @ A
        dK_phi[j] = dK0[j] - (T + T.T) + A.T @ Pj @ A
    return K, dK_theta, dK_phi


def ortho_kernel_grad(basis: OrthoBasis, X, wrt: tuple[str, int]) -> np.ndarray:
    """One derivative matrix; ``wrt`` is ``("theta", j)`` or ``("phi", j)``."""
    if basis.dWF is None:
        basis = build_basis(basis.model, basis.theta, basis.k0, points=basis.points, with_W_grad=True)
    _, dth, dph = ortho_kernel_derivs(basis, X)
    kind, j = wrt
    if kind == "theta":
        return dth[j]
    if kind == "phi":
        return dph[j]
    raise ValueError(f"unknown derivative target {kind!r}")


def mc_orthogonality_residual(basis: OrthoBasis, X) -> np.ndarray:
    """``(1/m) F^T k(xi, X)``; zero up to solve tolerance. Shape (q, len(X))."""
    return basis.F.T @ ortho_kernel_matrix(basis, basis.xi, X) / basis.points.m
