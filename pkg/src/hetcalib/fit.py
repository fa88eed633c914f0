"""Maximum-likelihood calibration for the four GP estimators."""
from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .design import ReplicatedDesign
from .inference import (ConfidenceRegion, InfoMatrix, InferenceError, TestResult, confidence_region,
                        het_test, information_matrix)
from .likelihood import HetCalibParams, LikelihoodState, Objective, ParamLayout, log_likelihood
from .models import ComputerModel
from .noise import initial_delta
from .optimize import OptConfig, OptProblem, OptReport, maximize, multistart_grid
from .ortho import MCPoints, sample_points


@dataclass(frozen=True)
class FitSettings:
    """Numerical choices for a fit. Lengthscale boxes are relative to the domain width."""

    orthogonal: bool = True
    heteroscedastic: bool = True
    kernel: str = "matern52"
    kernel_g: str = "matern52"
    mc_samples: int = 1000
    mc_seed: int = 0
    starts: int = 5
    seed: int = 0
    # theta-scan: objective evaluated at this many theta values (other
    # coordinates at the heuristic start); the best local maxima seed starts
    scan_points: int = 200
    scan_starts: int = 3
    scan_phi_rel: float = 1.0
    maxiter: int = 500
    gtol: float = 1e-5
    screen_iters: int = 60
    screen_keep: int = 2
    phi_rel: tuple = (0.02, 3.0)
    phi_init_rel: float = 0.25
    phi_g_rel: tuple = (0.05, 1.0)
    phi_g_init_rel: float = 0.3
    g_bounds: tuple = (1e-6, 100.0)
    g_init: float = 0.1
    delta_bound: float = 25.0
    compute_info: bool = True

    def opt_config(self) -> OptConfig:
        return OptConfig(maxiter=self.maxiter, gtol=self.gtol, starts=self.starts, seed=self.seed,
                         screen_iters=self.screen_iters, screen_keep=self.screen_keep)


@dataclass(eq=False)
class FitResult:
    estimator: str
    params: HetCalibParams
    state: LikelihoodState
    report: OptReport
    layout: ParamLayout
    bounds: np.ndarray
    design: ReplicatedDesign
    model: ComputerModel
    points: MCPoints | None
    settings: FitSettings
    wall_time: float
    metadata: dict = field(default_factory=dict)
    _info: InfoMatrix | None = None
    info_error: str | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    @property
    def log_likelihood(self) -> float:
        return self.state.value

    @property
    def heteroscedastic(self) -> bool:
        return self.params.heteroscedastic

    def at_bound(self, tol=1e-6) -> list[str]:
        """Natural-coordinate names of hyperparameters whose estimate sits on its box."""
        x = self.layout.to_vector(self.params)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        hit = (x - lo < tol * (hi - lo)) | (hi - x < tol * (hi - lo))
        out = []
        for nm, h in zip(self.layout.names(), hit):
            if h and not nm.startswith(("theta", "delta")):
                out.append(nm.replace("log_", ""))
        return out

    def info(self) -> InfoMatrix:
        if self._info is None:
            self._info = information_matrix(self.params, self.design, self.model, self.points,
                                            fixed=self.at_bound())
        return self._info

    def confidence(self, alpha=0.05) -> ConfidenceRegion:
        return confidence_region(self.info(), self.theta, alpha)

    def het_test(self) -> TestResult:
        if not self.heteroscedastic:
            raise ValueError("the heteroscedasticity test needs a latent-noise estimator")
        return het_test(self.info(), self.params.delta)

    @property
    def noise_variance_at_design(self) -> np.ndarray:
        return self.params.nu * np.exp(self.state.log_lambda)


def _width(design):
    w = design.bounds[:, 1] - design.bounds[:, 0]
    return np.where(w > 0, w, 1.0)


def build_layout(design, model, s: FitSettings):
    """Layout, coordinate box and heuristic first start."""
    lay = ParamLayout(model.q, design.d, design.n, s.heteroscedastic, s.kernel, s.kernel_g)
    w = _width(design)
    lo = [model.theta_bounds[:, 0], np.log(s.phi_rel[0] * w)]
    hi = [model.theta_bounds[:, 1], np.log(s.phi_rel[1] * w)]
    x0 = [model.theta_bounds.mean(axis=1), np.log(s.phi_init_rel * w)]
    meta = {}
    if s.heteroscedastic:
        nu0 = design.pooled_variance()
        s2u = np.where(design.a > 1, design.unbiased_variance(), 0.0)
        d0 = np.clip(initial_delta(s2u, design.a, nu0), -s.delta_bound, s.delta_bound)
        meta["delta_init"] = d0.tolist()
        meta["delta_init_rule"] = "log(max(s2_unbiased, 1e-8) / pooled variance); 0 where a_i = 1"
        lo += [np.log(s.phi_g_rel[0] * w), [np.log(s.g_bounds[0])], np.full(design.n, -s.delta_bound)]
        hi += [np.log(s.phi_g_rel[1] * w), [np.log(s.g_bounds[1])], np.full(design.n, s.delta_bound)]
        x0 += [np.log(s.phi_g_init_rel * w), [np.log(s.g_init)], d0]
    bounds = np.column_stack([np.concatenate(lo), np.concatenate(hi)])
    return lay, bounds, np.concatenate(x0), meta


def theta_scan(obj, bounds, x0, points: int, keep: int, seed=0) -> list[np.ndarray]:
    """Starts at the ``keep`` best theta values of a cheap scan.

    One objective evaluation per scanned theta, all other coordinates held at
    ``x0``.  A one-dimensional theta is scanned on a uniform grid and only
    local maxima of the scan are kept; otherwise a Latin hypercube is used and
    kept values must be at least 10% of the box apart in some coordinate.
    """
    if points <= 0 or keep <= 0:
        return []
    q = obj.layout.q
    lo, hi = bounds[:q, 0], bounds[:q, 1]
    if q == 1:
        grid = np.linspace(lo[0], hi[0], points)[:, None]
    else:
        grid = lo + (hi - lo) * qmc.LatinHypercube(d=q, seed=np.random.default_rng(seed)).random(points)
    vals = np.full(len(grid), -np.inf)
    for i, t in enumerate(grid):
        x = x0.copy()
        x[:q] = t
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                v = obj.value(x)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            continue
        vals[i] = v if np.isfinite(v) else -np.inf
    if q == 1:
        pad = np.concatenate([[-np.inf], vals, [-np.inf]])
        cand = [i for i in range(len(vals)) if vals[i] > -np.inf
                and vals[i] >= pad[i] and vals[i] >= pad[i + 2]]
    else:
        cand = [i for i in range(len(vals)) if vals[i] > -np.inf]
    cand.sort(key=lambda i: -vals[i])
    out, chosen = [], []
    for i in cand:
        if q > 1 and any(np.max(np.abs(grid[i] - grid[j]) / (hi - lo)) < 0.1 for j in chosen):
            continue
        chosen.append(i)
        x = x0.copy()
        x[:q] = grid[i]
        out.append(x)
        if len(out) == keep:
            break
    return out


def fit_gp(design: ReplicatedDesign, model: ComputerModel, settings: FitSettings = FitSettings(),
           estimator: str | None = None, points: MCPoints | None = None, extra_starts=()) -> FitResult:
    """Maximize the calibration likelihood.

    ``points`` overrides the Monte Carlo sample (ignored for the plain kernel).
    ``extra_starts`` are appended after the Latin-hypercube starts.
    """
    t0 = time.perf_counter()
    if estimator is None:
        estimator = ("Het" if settings.heteroscedastic else "Hom") + ("OGP" if settings.orthogonal else "GP")
    if settings.orthogonal and points is None:
        points = sample_points(design.bounds, settings.mc_samples, settings.mc_seed)
    if not settings.orthogonal:
        points = None
    lay, bounds, x0, meta = build_layout(design, model, settings)
    randomize = np.ones(lay.size, bool)
    if lay.het:
        randomize[lay.slices()["delta"]] = False
    obj = Objective(lay, design, model, points)
    xs = x0.copy()
    xs[lay.slices()["phi"]] = np.clip(np.log(settings.scan_phi_rel * _width(design)),
                                      bounds[lay.slices()["phi"], 0], bounds[lay.slices()["phi"], 1])
    scanned = theta_scan(obj, bounds, xs, settings.scan_points, settings.scan_starts, settings.seed)
    n_lhs = max(settings.starts - len(scanned), 1)
    starts = multistart_grid(bounds, n_lhs, settings.seed, first=x0, randomize=randomize)
    starts = starts[:1] + scanned + starts[1:]
    starts += [np.asarray(s, dtype=float) for s in extra_starts]
    meta["scan_thetas"] = [s[:model.q].tolist() for s in scanned]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = maximize(OptProblem(obj, bounds, starts), settings.opt_config())
    params = lay.from_vector(report.x)
    state = log_likelihood(params, design, model, points)
    params = params.with_scales(state.nu_hat, state.nu_g_hat)
    meta.update(evaluations=obj.evaluations, mc_samples=None if points is None else points.m,
                mc_seed=None if points is None else points.seed)
    res = FitResult(estimator, params, state, report, lay, bounds, design, model, points, settings,
                    0.0, meta)
    if settings.compute_info:
        try:
            res.info()
        except (InferenceError, ArithmeticError, np.linalg.LinAlgError) as exc:
            res.info_error = str(exc)
    res.wall_time = time.perf_counter() - t0
    return res


def settings_dict(s: FitSettings) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(s).items()}


def settings_from_dict(d: dict) -> FitSettings:
    known = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()
             if k in FitSettings.__dataclass_fields__}
    return replace(FitSettings(), **known)
