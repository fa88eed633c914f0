"""Expected information matrix, confidence regions and the heteroscedasticity test.

Parameters are taken in natural coordinates::

    omega = (theta, phi, nu, phi_g, g, nu_g, delta)

with the last four blocks present only for heteroscedastic fits.  The mean
covariance is ``Sigma = nu (U K_n U^T + diag(U lambda))`` and every one of its
first derivatives has the form ``U D U^T + diag(U d)``.  Such matrices leave
both the span of the group indicators and the within-group contrasts
invariant, so traces reduce to n x n work plus a scalar contrast sum.  The
latent block uses ``V = nu_g Gamma_g`` and the negative Hessian of
``-1/2 log|V| - 1/2 delta^T V^{-1} delta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .design import ReplicatedDesign
from .kernels import kernel_hess_lengthscale
from .likelihood import HetCalibParams, _mean_kernel, latent_scale, log_likelihood
from .models import ComputerModel
from .noise import NoiseField
from .ortho import MCPoints
from .stats import chi2_quantile, chi2_sf


class InferenceError(ArithmeticError):
    pass


def omega_names(q: int, d: int, n: int, het: bool) -> list[str]:
    out = [f"theta{j + 1}" for j in range(q)] + [f"phi{j + 1}" for j in range(d)] + ["nu"]
    if het:
        out += [f"phi_g{j + 1}" for j in range(d)] + ["g", "nu_g"] + [f"delta{i + 1}" for i in range(n)]
    return out


def _with_scales(params, design, model, points):
    if params.nu is None or (params.heteroscedastic and params.nu_g is None):
        st = log_likelihood(params, design, model, points)
        params = params.with_scales(st.nu_hat, st.nu_g_hat)
    if params.heteroscedastic and not params.nu_g > 0:
        # delta == 0: use the limit of the floored scale so that V stays invertible
        nf = NoiseField.build(design.locations, design.a, params.delta, params.noise_kernel(), params.g)
        params = params.with_scales(params.nu, latent_scale(1e-300, design.n, nf.logdet())[0])
    return params


@dataclass
class _Pieces:
    names: list
    K: np.ndarray
    lam: np.ndarray
    ell: np.ndarray
    F: np.ndarray
    sig: list  # (D, dvec) per omega coordinate
    noise: NoiseField | None
    dKg: np.ndarray | None
    d2Kg: np.ndarray | None


def _pieces(params: HetCalibParams, design: ReplicatedDesign, model: ComputerModel,
            points: MCPoints | None) -> _Pieces:
    X, a = design.locations, design.a.astype(float)
    n, q, d = design.n, model.q, design.d
    nu = params.nu
    K, dKth, dKph, _ = _mean_kernel(params, design, model, points, True)
    F = model.grad_theta(X, params.theta)
    noise = dKg = d2Kg = None
    if params.heteroscedastic:
        Kg, dKg, d2Kg = kernel_hess_lengthscale(params.noise_kernel(), X)
        noise = NoiseField.build(X, a, params.delta, params.noise_kernel(), params.g, Kg=Kg)
        ell = Kg @ noise.alpha
    else:
        ell = np.zeros(n)
    lam = np.exp(ell)
    zero_D, zero_d = np.zeros((n, n)), np.zeros(n)
    sig = [(nu * dKth[j], zero_d) for j in range(q)]
    sig += [(nu * dKph[j], zero_d) for j in range(d)]
    sig.append((K, lam))
    if noise is not None:
        ag = noise.alpha
        Ggi = noise.solve(np.eye(n))
        KG = noise.Kg @ Ggi
        proj = np.eye(n) - KG
        for j in range(d):
            sig.append((zero_D, nu * lam * (proj @ (dKg[j] @ ag))))
        sig.append((zero_D, nu * lam * (-(KG @ (ag / a)))))
        sig.append((zero_D, zero_d))  # nu_g does not enter Sigma
        for i in range(n):
            sig.append((zero_D, nu * lam * KG[:, i]))
    names = omega_names(q, d, n, params.heteroscedastic)
    return _Pieces(names, K, lam, ell, F, sig, noise, dKg, d2Kg)


def sigma_derivatives(params, design, model, points=None):
    """``[(name, D, dvec)]`` with ``dSigma/domega = U D U^T + diag(U dvec)``."""
    params = _with_scales(params, design, model, points)
    pc = _pieces(params, design, model, points)
    return [(nm, D, dv) for nm, (D, dv) in zip(pc.names, pc.sig)]


def v_derivatives(params, design):
    """First and second derivatives of ``V = nu_g Gamma_g`` over ``(phi_g, g, nu_g)``.

    Returns ``(names, V, dV, d2V)`` with ``dV`` shape (k, n, n) and ``d2V`` (k, k, n, n).
    """
    X, a = design.locations, design.a.astype(float)
    n, d = design.n, design.d
    Kg, dKg, d2Kg = kernel_hess_lengthscale(params.noise_kernel(), X)
    nu_g = params.nu_g
    Gg = Kg + np.diag(params.g / a)
    k = d + 2
    Ainv = np.diag(1.0 / a)
    dV = np.zeros((k, n, n))
    d2V = np.zeros((k, k, n, n))
    dV[:d] = nu_g * dKg
    dV[d] = nu_g * Ainv
    dV[d + 1] = Gg
    d2V[:d, :d] = nu_g * d2Kg
    for j in range(d):
        d2V[d + 1, j] = d2V[j, d + 1] = dKg[j]
    d2V[d + 1, d] = d2V[d, d + 1] = Ainv
    names = [f"phi_g{j + 1}" for j in range(d)] + ["g", "nu_g"]
    return names, nu_g * Gg, dV, d2V


@dataclass
class InfoMatrix:
    B: np.ndarray
    names: list
    free: np.ndarray  # bool mask; False = profiled out (estimate on a bound)
    blocks: dict
    asymmetry: float
    v_block: str = "observed"  # or "expected" when the observed latent block was not positive definite

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def min_eigenvalue(self) -> float:
        Bf = self.B[np.ix_(self.free, self.free)]
        return float(np.linalg.eigvalsh(Bf).min())

    def covariance(self) -> np.ndarray:
        """Inverse of B over the free coordinates, embedded with NaN rows for fixed ones."""
        Bf = self.B[np.ix_(self.free, self.free)]
        try:
            cho = cho_factor(Bf, lower=True)
        except LinAlgError:
            raise InferenceError(
                f"information matrix is not positive definite (smallest eigenvalue "
                f"{np.linalg.eigvalsh(Bf).min():.3g})") from None
        inv = cho_solve(cho, np.eye(Bf.shape[0]))
        out = np.full(self.B.shape, np.nan)
        out[np.ix_(self.free, self.free)] = 0.5 * (inv + inv.T)
        return out


def _is_pd(M):
    try:
        cho_factor(M, lower=True)
        return True
    except LinAlgError:
        return False


def information_matrix(params: HetCalibParams, design: ReplicatedDesign, model: ComputerModel,
                       points: MCPoints | None = None, fixed=(), v_block: str = "auto") -> InfoMatrix:
    """Information at ``params``; names in ``fixed`` are profiled out.

    The latent block treats ``delta`` as observed (``v_block="observed"``), which
    need not be positive definite away from the optimum.  ``"expected"`` averages
    it over ``delta ~ N(0, V)`` instead, leaving ``1/2 tr(V^-1 V_i V^-1 V_j)`` and
    a zero cross block.  ``"auto"`` uses the observed form unless the free part
    of the result is not positive definite.
    """
    if v_block not in ("auto", "observed", "expected"):
        raise ValueError(f"unknown v_block {v_block!r}")
    params = _with_scales(params, design, model, points)
    pc = _pieces(params, design, model, points)
    a = design.a.astype(float)
    nu, lam = params.nu, pc.lam
    q, d = model.q, design.d
    sa = np.sqrt(a)
    S = nu * (sa[:, None] * pc.K * sa[None, :] + np.diag(lam))
    try:
        Scho = cho_factor(S, lower=True)
    except LinAlgError:
        raise InferenceError("covariance of the group means is not positive definite") from None
    mats = [cho_solve(Scho, sa[:, None] * D * sa[None, :] + np.diag(dv)) for D, dv in pc.sig]
    dvs = np.array([dv for _, dv in pc.sig])
    m = len(mats)
    B0 = np.empty((m, m))
    cw = (a - 1.0) / (nu * lam) ** 2
    for i in range(m):
        for j in range(i, m):
            t = np.sum(mats[i] * mats[j].T) + np.sum(cw * dvs[i] * dvs[j])
            B0[i, j] = B0[j, i] = 0.5 * t
    B = B0.copy()
    used = "observed"
    free = np.array([nm not in set(fixed) for nm in pc.names])
    # f^T Sigma^{-1} f reduces to Fbar^T Gamma_n^{-1} Fbar / nu
    Gn = pc.K + np.diag(lam / a)
    B11 = pc.F.T @ np.linalg.solve(Gn, pc.F) / nu
    B[:q, :q] += B11
    blocks = {"B0": B0, "B11": B11}
    if params.heteroscedastic:
        _, V, dV, d2V = v_derivatives(params, design)
        Vi = np.linalg.inv(V)
        Vi = 0.5 * (Vi + Vi.T)
        k = dV.shape[0]
        delta = params.delta
        Vid = Vi @ delta
        P = [Vi @ dV[i] for i in range(k)]
        B33o, B33e = np.empty((k, k)), np.empty((k, k))
        for i in range(k):
            for j in range(i, k):
                tt = 0.5 * np.sum(P[i] * P[j].T)
                t = 0.5 * np.trace(Vi @ d2V[i, j]) - tt
                t += Vid @ dV[i] @ Vi @ dV[j] @ Vid - 0.5 * Vid @ d2V[i, j] @ Vid
                B33o[i, j] = B33o[j, i] = t
                B33e[i, j] = B33e[j, i] = tt
        B43o = np.column_stack([-(Vi @ (dV[j] @ Vid)) for j in range(k)])
        o3 = q + d + 1
        o4 = o3 + k

        def assemble(B33, B43):
            out = B.copy()
            out[o3:o4, o3:o4] += B33
            out[o4:, o3:o4] += B43
            out[o3:o4, o4:] += B43.T
            out[o4:, o4:] += Vi
            return out

        Bo = assemble(B33o, B43o)
        Bos = 0.5 * (Bo + Bo.T)
        if v_block == "expected" or (v_block == "auto" and not _is_pd(Bos[np.ix_(free, free)])):
            used = "expected"
            B33, B43 = B33e, np.zeros_like(B43o)
            B = assemble(B33, B43)
        else:
            B33, B43, B = B33o, B43o, Bo
        blocks.update(B33=B33, B43=B43, B44=Vi)
    asym = float(np.max(np.abs(B - B.T)))
    B = 0.5 * (B + B.T)
    return InfoMatrix(B, pc.names, free, blocks, asym, used)


@dataclass
class ConfidenceRegion:
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    cov: np.ndarray  # covariance of theta-hat
    radius2: float  # chi2_{q, 1 - alpha}
    alpha: float
    conditional: bool  # some hyperparameter was profiled out

    def contains(self, theta) -> bool:
        """Ellipsoid membership of ``theta``."""
        r = np.atleast_1d(theta) - self.estimate
        return bool(r @ np.linalg.solve(self.cov, r) <= self.radius2)

    def covers(self, theta) -> np.ndarray:
        theta = np.atleast_1d(theta)
        return (self.lower <= theta) & (theta <= self.upper)


def confidence_region(info: InfoMatrix, theta_hat, alpha: float = 0.05) -> ConfidenceRegion:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    q = theta_hat.size
    cov = info.covariance()[:q, :q]
    if np.any(np.isnan(cov)):
        raise InferenceError("a calibration parameter was profiled out; no interval available")
    se = np.sqrt(np.diag(cov))
    z = np.sqrt(chi2_quantile(1, 1.0 - alpha))
    return ConfidenceRegion(theta_hat, se, theta_hat - z * se, theta_hat + z * se, cov,
                            chi2_quantile(q, 1.0 - alpha), alpha, not bool(np.all(info.free)))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int
    p_value: float
    reject_at: dict

    __test__ = False  # not a pytest class


def het_test(info: InfoMatrix, delta_hat, alphas=(0.01, 0.05, 0.10)) -> TestResult:
    """Wald statistic ``delta^T (H B^{-1} H^T)^{-1} delta`` referred to chi2_n."""
    delta_hat = np.asarray(delta_hat, dtype=float)
    n = delta_hat.size
    idx = [info.index(f"delta{i + 1}") for i in range(n)]
    if not np.any(delta_hat):
        stat = 0.0
    else:
        cov = info.covariance()[np.ix_(idx, idx)]
        if np.any(np.isnan(cov)):
            raise InferenceError("latent block profiled out; the test is unavailable")
        try:
            cho = cho_factor(cov, lower=True)
        except LinAlgError:
            raise InferenceError("latent block of B^{-1} is not positive definite") from None
        stat = max(0.0, float(delta_hat @ cho_solve(cho, delta_hat)))
    p = chi2_sf(stat, n)
    return TestResult(stat, n, p, {float(al): bool(p < al) for al in alphas})
