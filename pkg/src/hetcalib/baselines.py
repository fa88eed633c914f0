"""Comparison estimators and the quadrature oracles for theta* and theta'.

The GP variants differ only in two toggles (orthogonal kernel, latent
noise); weighted least squares fits the unique-location means directly.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize

from .design import ReplicatedDesign
from .fit import FitResult, FitSettings, fit_gp
from .models import ComputerModel
from .optimize import OptConfig, OptProblem, maximize, multistart_grid


class EstimatorKind(str, enum.Enum):
    WLS = "WLS"
    HOMGP = "HomGP"
    HOMOGP = "HomOGP"
    HETGP = "HetGP"
    HETOGP = "HetOGP"

    @property
    def orthogonal(self) -> bool:
        return self in (EstimatorKind.HOMOGP, EstimatorKind.HETOGP)

    @property
    def heteroscedastic(self) -> bool:
        return self in (EstimatorKind.HETGP, EstimatorKind.HETOGP)

    @property
    def is_gp(self) -> bool:
        return self is not EstimatorKind.WLS

    @classmethod
    def parse(cls, s) -> "EstimatorKind":
        if isinstance(s, cls):
            return s
        for k in cls:
            if k.value.lower() == str(s).strip().lower():
                return k
        raise ValueError(f"unknown estimator {s!r}; choose from {[k.value for k in cls]}")


WEIGHTS = ("sample-variance", "known-r", "unit")


@dataclass
class WLSResult:
    theta: np.ndarray
    objective: float
    weights: np.ndarray
    weighting: str
    reason: str
    wall_time: float
    estimator: str = "WLS"


def fit_wls(design: ReplicatedDesign, model: ComputerModel, weights: str = "sample-variance",
            r: Callable | None = None, starts: int = 5, seed: int = 0) -> WLSResult:
    """argmin over theta of ``sum_i (ybar_i - f(x_i, theta))^2 / w_i``.

    ``weights`` picks ``w_i``: the unbiased replicate variance, the known
    variance function ``r`` evaluated at the locations, or 1.
    """
    t0 = time.perf_counter()
    X = design.locations
    if weights == "sample-variance":
        if np.any(design.a < 2):
            raise ValueError("sample-variance weights need at least two replicates everywhere; "
                             "use unit weights instead")
        w = design.unbiased_variance()
        if np.any(w <= 0):
            raise ValueError("zero sample variance at some location; the weight is undefined")
    elif weights == "known-r":
        if r is None:
            raise ValueError("known-r weights need the variance function r")
        w = np.asarray(r(X), dtype=float).ravel()
        if np.any(w <= 0):
            raise ValueError("r must be positive at every design location")
    elif weights == "unit":
        w = np.ones(design.n)
    else:
        raise ValueError(f"unknown weighting {weights!r}; choose from {WEIGHTS}")
    ybar = design.ybar

    def objective(theta):
        res = ybar - model.eval(X, theta)
        G = model.grad_theta(X, theta)
        return -float(np.sum(res ** 2 / w)), 2.0 * G.T @ (res / w)

    b = model.theta_bounds
    rep = maximize(OptProblem(objective, b, multistart_grid(b, starts, seed)), OptConfig())
    return WLSResult(rep.x, -rep.value, w, weights, rep.reason, time.perf_counter() - t0)


def gauss_legendre_grid(bounds, nodes_per_dim: int = 200, panels: int = 20):
    """Composite Gauss-Legendre nodes and weights for the uniform law on a box.

    Each axis is cut into ``panels`` equal pieces with ``nodes_per_dim /
    panels`` nodes each.  Weights sum to one.
    """
    bounds = np.asarray(bounds, dtype=float)
    if nodes_per_dim % panels:
        raise ValueError("nodes_per_dim must be a multiple of panels")
    t, wt = leggauss(nodes_per_dim // panels)
    axes, wax = [], []
    for lo, hi in bounds:
        edges = np.linspace(lo, hi, panels + 1)
        h = np.diff(edges) / 2.0
        mid = (edges[:-1] + edges[1:]) / 2.0
        axes.append((mid[:, None] + h[:, None] * t[None, :]).ravel())
        wax.append((h[:, None] * wt[None, :]).ravel() / (hi - lo))
    mesh = np.meshgrid(*axes, indexing="ij")
    wmesh = np.meshgrid(*wax, indexing="ij")
    X = np.column_stack([m.ravel() for m in mesh])
    W = np.prod(np.column_stack([m.ravel() for m in wmesh]), axis=1)
    return X, W


@dataclass
class OracleResult:
    theta: np.ndarray
    value: float
    nodes: int
    grid_best: np.ndarray
    wall_time: float


def _weighted_l2_oracle(model, zeta, weight, bounds, nodes_per_dim, grid_per_dim, polish):
    t0 = time.perf_counter()
    X, W = gauss_legendre_grid(bounds, nodes_per_dim)
    z = np.asarray(zeta(X), dtype=float).ravel()
    W = W * weight(X)

    def crit(theta):
        res = z - model.eval(X, theta)
        return float(W @ res ** 2)

    def crit_grad(theta):
        res = z - model.eval(X, theta)
        G = model.grad_theta(X, theta)
        return float(W @ res ** 2), -2.0 * G.T @ (W * res)

    tb = model.theta_bounds
    axes = [np.linspace(lo, hi, grid_per_dim) for lo, hi in tb]
    cands = np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])
    vals = np.array([crit(c) for c in cands])
    order = np.argsort(vals)[:polish]
    best = None
    for i in order:
        res = minimize(crit_grad, cands[i], jac=True, method="L-BFGS-B", bounds=tb,
                       options=dict(ftol=1e-15, gtol=1e-12, maxiter=1000))
        if best is None or res.fun < best.fun:
            best = res
    return OracleResult(np.asarray(best.x), float(best.fun), X.shape[0], cands[order[0]],
                        time.perf_counter() - t0)


def l2_truth_oracle(model: ComputerModel, zeta: Callable, bounds, nodes_per_dim: int = 200,
                    grid_per_dim: int | None = None, polish: int = 5) -> OracleResult:
    """theta* minimizing the uniform-law squared distance between ``zeta`` and the model."""
    g = grid_per_dim or (401 if model.q == 1 else 21)
    return _weighted_l2_oracle(model, zeta, lambda X: 1.0, bounds, nodes_per_dim, g, polish)


def wls_limit_oracle(model: ComputerModel, zeta: Callable, r: Callable, bounds, nodes_per_dim: int = 200,
                     grid_per_dim: int | None = None, polish: int = 5) -> OracleResult:
    """theta' minimizing the same distance weighted by ``1 / r``."""

    def weight(X):
        rv = np.asarray(r(X), dtype=float).ravel()
        if np.any(rv <= 0):
            raise ValueError("r must be positive on the domain")
        return 1.0 / rv

    g = grid_per_dim or (401 if model.q == 1 else 21)
    return _weighted_l2_oracle(model, zeta, weight, bounds, nodes_per_dim, g, polish)


def variant_settings(kind: EstimatorKind, base: FitSettings = FitSettings()) -> FitSettings:
    kind = EstimatorKind.parse(kind)
    if not kind.is_gp:
        raise ValueError("WLS is not a GP variant")
    return replace(base, orthogonal=kind.orthogonal, heteroscedastic=kind.heteroscedastic)


def fit_variant(kind, design: ReplicatedDesign, model: ComputerModel, cfg: FitSettings = FitSettings(),
                points=None, **wls_kwargs) -> FitResult | WLSResult:
    kind = EstimatorKind.parse(kind)
    if kind is EstimatorKind.WLS:
        return fit_wls(design, model, **wls_kwargs)
    return fit_gp(design, model, variant_settings(kind, cfg), estimator=kind.value, points=points)
