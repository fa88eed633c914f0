"""Box-bounded quasi-Newton maximization with deterministic multistart."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

log = logging.getLogger(__name__)

_FAILED = 1e25  # stand-in for -log L at points where the objective cannot be evaluated

REASONS = ("gradient-tolerance", "step-tolerance", "max-iters", "line-search-failure", "screened-out")


@dataclass
class OptProblem:
    objective: Callable  # x -> (value, gradient), to be maximized
    bounds: np.ndarray
    starts: Sequence[np.ndarray]

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("every bound needs lo < hi")
        self.starts = [np.clip(np.asarray(s, dtype=float), self.bounds[:, 0], self.bounds[:, 1])
                       for s in self.starts]
        if not self.starts:
            raise ValueError("at least one start point is required")


@dataclass(frozen=True)
class OptConfig:
    maxiter: int = 500
    gtol: float = 1e-5
    ftol: float = 1e-12
    history: int = 10
    starts: int = 5
    seed: int = 0
    # stop when the last `stall_window` iterations gained less than `stall_tol` in total
    stall_window: int = 10
    stall_tol: float = 1e-5
    # with several starts: run each for `screen_iters` iterations, then carry
    # on only the `screen_keep` best (0 disables screening)
    screen_iters: int = 0
    screen_keep: int = 2


@dataclass
class StartOutcome:
    index: int
    x0: np.ndarray
    f0: float
    x: np.ndarray | None = None
    value: float = -np.inf
    iterations: int = 0
    evaluations: int = 0
    grad_norm: float = np.nan
    reason: str = "failed"
    message: str = ""
    trace: list = field(default_factory=list)


@dataclass
class OptReport:
    x: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    reason: str
    starts: list[StartOutcome]
    method: str = "L-BFGS-B"
    history: int = 10

    @property
    def best_start(self) -> int:
        return min((s for s in self.starts if s.value == self.value), key=lambda s: s.index).index

    def summary(self) -> dict:
        return {
            "method": self.method, "history": self.history, "value": self.value,
            "iterations": self.iterations, "grad_norm": self.grad_norm, "reason": self.reason,
            "best_start": self.best_start,
            "starts": [{"index": s.index, "f0": s.f0, "value": s.value, "iterations": s.iterations,
                        "reason": s.reason} for s in self.starts],
        }


def projected_gradient(x, g, bounds, atol=1e-10):
    """Gradient of a maximization problem with components that push against an active bound zeroed."""
    pg = np.array(g, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    pg[(x <= lo + atol) & (pg < 0)] = 0.0
    pg[(x >= hi - atol) & (pg > 0)] = 0.0
    return pg


def _reason(res) -> str:
    msg = str(res.message).upper()
    if "PROJECTED GRADIENT" in msg or "PGTOL" in msg:
        return "gradient-tolerance"
    if "REL_REDUCTION" in msg:
        return "step-tolerance"
    if "ITERATIONS" in msg or "EVALUATIONS" in msg:
        return "max-iters"
    return "line-search-failure"


def _run_start(problem: OptProblem, cfg: OptConfig, k: int, x0, maxiter=None) -> StartOutcome:
    cache: dict = {}

    def neg(x):
        key = x.tobytes()
        if key not in cache:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    v, g = problem.objective(x)
                v, g = float(v), np.asarray(g, dtype=float)
                if not (np.isfinite(v) and np.all(np.isfinite(g))):
                    raise ArithmeticError("non-finite objective")
            except (ArithmeticError, ValueError) as exc:
                log.debug("objective failed at %s: %s", x, exc)
                v, g = -_FAILED, np.zeros_like(x)
            cache.clear()
            cache[key] = (v, g)
        v, g = cache[key]
        return -v, -g

    f0 = -neg(x0)[0]
    out = StartOutcome(k, x0.copy(), f0)
    if f0 <= -_FAILED:
        out.message = "objective failed at the start point"
        return out
    trace = [f0]
    stalled = []

    def callback(intermediate_result):
        trace.append(-float(intermediate_result.fun))
        w = cfg.stall_window
        if w and len(trace) > w and trace[-1] - trace[-1 - w] < cfg.stall_tol:
            stalled.append(len(trace) - 1)
            raise StopIteration

    res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=problem.bounds, callback=callback,
                   options=dict(maxiter=maxiter or cfg.maxiter, gtol=cfg.gtol, ftol=cfg.ftol, maxcor=cfg.history))
    x = np.clip(res.x, problem.bounds[:, 0], problem.bounds[:, 1])
    v, g = neg(x)
    out.x, out.value = x, -v
    out.iterations, out.evaluations = int(res.nit), int(res.nfev)
    out.grad_norm = float(np.max(np.abs(projected_gradient(x, -g, problem.bounds)))) if x.size else 0.0
    out.reason = "step-tolerance" if stalled else _reason(res)
    out.message = str(res.message)
    out.trace = trace
    return out


def maximize(problem: OptProblem, cfg: OptConfig = OptConfig()) -> OptReport:
    """Maximize from every start; best value wins, ties go to the lowest start index.

    A start whose objective cannot be evaluated is skipped with a warning;
    RuntimeError is raised only when every start fails.
    """
    screen = cfg.screen_iters if len(problem.starts) > cfg.screen_keep else 0
    outcomes = []
    for k, x0 in enumerate(problem.starts):
        oc = _run_start(problem, cfg, k, x0, screen or None)
        if oc.x is None:
            warnings.warn(f"start {k} skipped: {oc.message}", RuntimeWarning, stacklevel=2)
        outcomes.append(oc)
    if screen:
        live = [o for o in outcomes if o.x is not None and o.reason == "max-iters"]
        live.sort(key=lambda o: (-o.value, o.index))
        for o in live[:cfg.screen_keep]:
            more = _run_start(problem, cfg, o.index, o.x, max(cfg.maxiter - o.iterations, 1))
            if more.x is not None and more.value >= o.value:
                more.x0, more.f0 = o.x0, o.f0
                more.iterations += o.iterations
                more.evaluations += o.evaluations
                more.trace = o.trace + more.trace[1:]
                outcomes[o.index] = more
        for o in outcomes:
            if o.x is not None and o.reason == "max-iters" and o.iterations <= screen:
                o.reason = "screened-out"
    ok = [o for o in outcomes if o.x is not None]
    if not ok:
        raise RuntimeError("objective failed at every start point")
    best = max(ok, key=lambda o: (o.value, -o.index))
    return OptReport(best.x, best.value, best.iterations, best.grad_norm, best.reason, outcomes,
                     history=cfg.history)


def multistart_grid(bounds, k: int, seed: int | None = 0, first=None, randomize=None) -> list[np.ndarray]:
    """``first`` (default: box center) followed by ``k - 1`` Latin-hypercube points.

    Coordinates with ``randomize[j] == False`` keep the value from ``first`` in
    every start.
    """
    if k < 1:
        raise ValueError("need k >= 1 starts")
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    first = 0.5 * (lo + hi) if first is None else np.asarray(first, dtype=float)
    starts = [first.copy()]
    if k == 1:
        return starts
    mask = np.ones(lo.size, bool) if randomize is None else np.asarray(randomize, bool)
    free = int(mask.sum())
    pts = qmc.LatinHypercube(d=max(free, 1), seed=np.random.default_rng(seed)).random(k - 1)
    for row in pts:
        s = first.copy()
        s[mask] = lo[mask] + row[:free] * (hi[mask] - lo[mask])
        starts.append(s)
    return starts
