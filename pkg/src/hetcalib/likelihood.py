"""Joint calibration log-likelihood in replicate-reduced form, with gradient.

Notation (all n-dimensional, n = number of unique locations)::

    rbar    = ybar - f(xbar, theta)
    Gamma_n = K_n + diag(lambda / a)
    N nu    = sum_i a_i s2_i / lambda_i + rbar^T Gamma_n^{-1} rbar
    log|K_N + Lambda_N| = log|Gamma_n| + sum_i [(a_i - 1) log lambda_i + log a_i]

The log-likelihood is the mean-field Gaussian term with ``nu`` profiled out
plus, for heteroscedastic fits, the Gaussian term of the latent vector
``delta`` under ``N(0, nu_g Gamma_g)`` with ``nu_g`` profiled out.

Optimizer coordinates are ``(theta, log phi, log phi_g, log g, delta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve

from .design import ReplicatedDesign
from .kernels import KernelSpec, kernel_grad_lengthscale, kernel_matrix
from .models import ComputerModel
from .noise import NoiseField, cho_logdet, spd_factor
from .ortho import MCPoints, build_basis, ortho_kernel_derivs, ortho_kernel_matrix

LOG_2PI = np.log(2.0 * np.pi)
# Lower limit for the generalized latent variance nu_g |Gamma_g|^(1/n).
# Without it the latent term is unbounded as delta -> 0, and flooring nu_g
# alone still lets a near-singular Gamma_g (tiny g) inflate -1/2 log|Gamma_g|.
NU_G_FLOOR = 1e-2


def latent_scale(quad: float, n: int, logdet: float = 0.0) -> tuple[float, bool]:
    """Plug-in ``nu_g`` from ``delta^T Gamma_g^{-1} delta`` and whether the floor binds.

    Returns ``(0, False)`` for ``delta == 0``.
    """
    if quad <= 0.0:
        return 0.0, False
    floor = NU_G_FLOOR * np.exp(-logdet / n)
    return (quad / n, False) if quad / n >= floor else (float(floor), True)


class LikelihoodError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class HetCalibParams:
    """Parameter vector ``omega``; ``delta is None`` means homoscedastic.

    ``nu`` and ``nu_g`` are plug-in scales, filled in after an evaluation.
    """

    theta: np.ndarray
    phi: np.ndarray
    phi_g: np.ndarray | None = None
    g: float | None = None
    delta: np.ndarray | None = None
    nu: float | None = None
    nu_g: float | None = None
    kernel: str = "matern52"
    kernel_g: str = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, dtype=float)))
        if np.any(self.phi <= 0):
            raise ValueError("lengthscales must be positive")
        if self.delta is not None:
            object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).ravel())
            if self.phi_g is None or self.g is None:
                raise ValueError("heteroscedastic parameters need phi_g and g")
            object.__setattr__(self, "phi_g", np.atleast_1d(np.asarray(self.phi_g, dtype=float)))
            if np.any(self.phi_g <= 0) or not self.g > 0:
                raise ValueError("phi_g and g must be positive")

    @property
    def heteroscedastic(self) -> bool:
        return self.delta is not None

    def with_scales(self, nu, nu_g=None) -> "HetCalibParams":
        return replace(self, nu=nu, nu_g=nu_g)

    def mean_kernel(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.phi)

    def noise_kernel(self) -> KernelSpec:
        return KernelSpec(self.kernel_g, self.phi_g)


@dataclass(frozen=True)
class ParamLayout:
    """Map between :class:`HetCalibParams` and flat optimizer coordinates."""

    q: int
    d: int
    n: int
    het: bool
    kernel: str = "matern52"
    kernel_g: str = "gaussian"

    @property
    def size(self) -> int:
        return self.q + self.d + (self.d + 1 + self.n if self.het else 0)

    def slices(self) -> dict[str, slice]:
        q, d, n = self.q, self.d, self.n
        out = {"theta": slice(0, q), "phi": slice(q, q + d)}
        if self.het:
            out["phi_g"] = slice(q + d, q + 2 * d)
            out["g"] = slice(q + 2 * d, q + 2 * d + 1)
            out["delta"] = slice(q + 2 * d + 1, q + 2 * d + 1 + n)
        return out

    def names(self) -> list[str]:
        out = [f"theta{j + 1}" for j in range(self.q)] + [f"log_phi{j + 1}" for j in range(self.d)]
        if self.het:
            out += [f"log_phi_g{j + 1}" for j in range(self.d)] + ["log_g"]
            out += [f"delta{i + 1}" for i in range(self.n)]
        return out

    def to_vector(self, p: HetCalibParams) -> np.ndarray:
        parts = [p.theta, np.log(p.phi)]
        if self.het:
            parts += [np.log(p.phi_g), [np.log(p.g)], p.delta]
        return np.concatenate([np.asarray(v, dtype=float).ravel() for v in parts])

    def from_vector(self, x) -> HetCalibParams:
        x = np.asarray(x, dtype=float)
        s = self.slices()
        kw = dict(theta=x[s["theta"]], phi=np.exp(x[s["phi"]]), kernel=self.kernel, kernel_g=self.kernel_g)
        if self.het:
            kw.update(phi_g=np.exp(x[s["phi_g"]]), g=float(np.exp(x[s["g"]][0])), delta=x[s["delta"]])
        return HetCalibParams(**kw)

    def natural_scale(self, x) -> np.ndarray:
        """d(natural)/d(coordinate) for each coordinate (chain-rule factors)."""
        x = np.asarray(x, dtype=float)
        out = np.ones(self.size)
        s = self.slices()
        out[s["phi"]] = np.exp(x[s["phi"]])
        if self.het:
            out[s["phi_g"]] = np.exp(x[s["phi_g"]])
            out[s["g"]] = np.exp(x[s["g"]])
        return out


@dataclass(eq=False)
class LikelihoodState:
    value: float
    mean_field: float
    variance_field: float
    nu_hat: float
    nu_g_hat: float | None
    log_lambda: np.ndarray
    K: np.ndarray
    Gamma_cho: tuple
    alpha: np.ndarray
    resid: np.ndarray
    noise: NoiseField | None = None
    basis: object = None
    gradient: np.ndarray | None = None
    parts: dict = field(default_factory=dict)

    def gamma_inv(self) -> np.ndarray:
        return cho_solve(self.Gamma_cho, np.eye(self.alpha.size))


def _mean_kernel(params, design, model, points, derivs):
    """K_n (and its theta/phi derivatives) for the plain or orthogonal kernel."""
    k0 = params.mean_kernel()
    X = design.locations
    if points is None:
        if not derivs:
            return kernel_matrix(k0, X), None, None, None
        K, dphi = kernel_grad_lengthscale(k0, X)
        return K, np.zeros((model.q,) + K.shape), dphi, None
    basis = build_basis(model, params.theta, k0, points=points, with_W_grad=derivs)
    if not derivs:
        return ortho_kernel_matrix(basis, X), None, None, basis
    K, dth, dph = ortho_kernel_derivs(basis, X)
    return K, dth, dph, basis


def plugin_scales(params: HetCalibParams, design: ReplicatedDesign, K_n, log_lambda, resid=None,
                  model: ComputerModel | None = None):
    """Profiled scales ``(nu_hat, nu_g_hat)``; ``nu_g_hat`` is None for homoscedastic params."""
    if resid is None:
        resid = design.ybar - model.eval(design.locations, params.theta)
    lam = np.exp(log_lambda)
    cho, _ = spd_factor(K_n + np.diag(lam / design.a), "Gamma_n")
    nu = (float(np.sum(design.a * design.s2 / lam)) + float(resid @ cho_solve(cho, resid))) / design.N
    nu_g = None
    if params.heteroscedastic:
        nf = NoiseField.build(design.locations, design.a, params.delta, params.noise_kernel(), params.g)
        nu_g = latent_scale(nf.nu_g * design.n, design.n, nf.logdet())[0]
    return nu, nu_g


def _evaluate(params: HetCalibParams, design: ReplicatedDesign, model: ComputerModel,
              points: MCPoints | None, grad: bool) -> LikelihoodState:
    X, a = design.locations, design.a.astype(float)
    n, N = design.n, design.N
    try:
        K, dK_th, dK_ph, basis = _mean_kernel(params, design, model, points, grad)
    except LinAlgError as exc:
        raise LikelihoodError(str(exc)) from exc
    resid = design.ybar - model.eval(X, params.theta)

    nf = None
    if params.heteroscedastic:
        Kg, dKg = kernel_grad_lengthscale(params.noise_kernel(), X) if grad else (None, None)
        nf = NoiseField.build(X, a, params.delta, params.noise_kernel(), params.g, Kg=Kg)
        ag = nf.alpha
        ell = nf.Kg @ ag
    else:
        ell = np.zeros(n)
    lam = np.exp(ell)

    try:
        cho, _ = spd_factor(K + np.diag(lam / a), "Gamma_n")
    except LinAlgError as exc:
        raise LikelihoodError(str(exc)) from exc
    alpha = cho_solve(cho, resid)
    Nnu = float(np.sum(a * design.s2 / lam)) + float(resid @ alpha)
    if not Nnu > 0:
        raise LikelihoodError("zero residual scale: the data are interpolated exactly")
    nu = Nnu / N
    logdet_N = cho_logdet(cho) + float(np.sum((a - 1.0) * ell + np.log(a)))
    mean_field = -0.5 * N * LOG_2PI - 0.5 * N * np.log(nu) - 0.5 * logdet_N - 0.5 * N

    var_field, nu_g = 0.0, None
    if nf is not None:
        quad = float(params.delta @ nf.alpha)
        nu_g, floored = latent_scale(quad, n, nf.logdet())
        # delta == 0 exactly is the homoscedastic model: no latent term
        if nu_g > 0:
            var_field = (-0.5 * n * LOG_2PI - 0.5 * n * np.log(nu_g) - 0.5 * nf.logdet()
                         - 0.5 * quad / nu_g)
    state = LikelihoodState(mean_field + var_field, mean_field, var_field, nu, nu_g, ell, K, cho,
                            alpha, resid, nf, basis)
    if not grad:
        return state

    Gi = state.gamma_inv()
    F = model.grad_theta(X, params.theta)
    g_theta = np.array([(2.0 * F[:, j] @ alpha + alpha @ dK_th[j] @ alpha) / (2 * nu)
                        - 0.5 * np.sum(Gi * dK_th[j]) for j in range(model.q)])
    g_phi = np.array([alpha @ dK_ph[j] @ alpha / (2 * nu) - 0.5 * np.sum(Gi * dK_ph[j])
                      for j in range(design.d)])
    parts = {"theta": g_theta, "phi": g_phi}
    if nf is not None:
        w = lam / a
        g_ell = (a * design.s2 / lam + alpha ** 2 * w) / (2 * nu) - 0.5 * (np.diag(Gi) * w + a - 1.0)
        Ggi = nf.solve(np.eye(n))
        KG = nf.Kg @ Ggi
        active = nu_g is not None and nu_g > 0
        # weight on d log|Gamma_g|: -1/2 directly, plus the floor's dependence on it
        wdet = -quad / (2 * n * nu_g) if active and floored else -0.5
        # mean-field part through ell, then the latent-prior part
        g_delta = KG.T @ g_ell
        if active:
            g_delta = g_delta - ag / nu_g
        proj = np.eye(n) - KG
        g_phig = np.empty(design.d)
        for j in range(design.d):
            v = dKg[j] @ ag
            g_phig[j] = g_ell @ (proj @ v)
            if active:
                g_phig[j] += ag @ v / (2 * nu_g) + wdet * np.sum(Ggi * dKg[j])
        ainv_ag = ag / a
        g_g = -g_ell @ (nf.Kg @ nf.solve(ainv_ag))
        if active:
            g_g += ag @ ainv_ag / (2 * nu_g) + wdet * float(np.sum(np.diag(Ggi) / a))
        parts.update(phi_g=g_phig, g=np.array([g_g]), delta=g_delta, ell=g_ell)
    state.parts = parts
    return state


def log_likelihood(params: HetCalibParams, design: ReplicatedDesign, model: ComputerModel,
                   points: MCPoints | None = None) -> LikelihoodState:
    """Value only. ``points`` is the fixed Monte Carlo sample; None selects the plain kernel."""
    return _evaluate(params, design, model, points, grad=False)


def log_likelihood_grad(params: HetCalibParams, design: ReplicatedDesign, model: ComputerModel,
                        points: MCPoints | None = None) -> LikelihoodState:
    """Value and gradient in optimizer coordinates ``(theta, log phi, log phi_g, log g, delta)``.

    ``state.parts`` holds the natural-coordinate blocks (plus ``ell``, the
    derivative with respect to the smoothed log-variances).
    """
    st = _evaluate(params, design, model, points, grad=True)
    p = st.parts
    blocks = [p["theta"], p["phi"] * params.phi]
    if params.heteroscedastic:
        blocks += [p["phi_g"] * params.phi_g, p["g"] * params.g, p["delta"]]
    st.gradient = np.concatenate(blocks)
    return st


class Objective:
    """Callable ``x -> (log L, gradient)`` over optimizer coordinates.

    Failed evaluations return ``(-inf, nan)``; the optimizer treats them as
    rejected steps.
    """

    def __init__(self, layout: ParamLayout, design, model, points=None):
        self.layout, self.design, self.model, self.points = layout, design, model, points
        self.evaluations = 0

    def params(self, x) -> HetCalibParams:
        return self.layout.from_vector(x)

    def value(self, x) -> float:
        self.evaluations += 1
        return log_likelihood(self.params(x), self.design, self.model, self.points).value

    def __call__(self, x):
        self.evaluations += 1
        st = log_likelihood_grad(self.params(x), self.design, self.model, self.points)
        return st.value, st.gradient
