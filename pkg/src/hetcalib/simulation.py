"""Simulation studies: scenarios, seeded data generation, study runs and tables."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import expr as ex
from .baselines import EstimatorKind, fit_variant, l2_truth_oracle, wls_limit_oracle
from .design import ReplicatedDesign, design_from_arrays
from .fit import FitSettings, settings_dict, settings_from_dict
from .models import BUILTINS, ComputerModel, builtin_model
from .predict import predict, predictive_score, rmse
from .stats import rank_sum_test


class ScenarioError(ValueError):
    pass


class InputFunction:
    """Expression in ``x1..xd`` evaluated row-wise over an (k, d) array."""

    def __init__(self, src: str, d: int):
        self.src, self.d = src, d
        self.ast = ex.parse(src, d, 0)

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        env = {f"x{j + 1}": X[:, j] for j in range(self.d)}
        return np.broadcast_to(np.asarray(ex.evaluate(self.ast, env), dtype=float), (X.shape[0],)).copy()

    def __repr__(self):
        return f"InputFunction({self.src!r})"


def probe_grid(bounds, total: int = 10_000) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float)
    k = max(2, int(math.ceil(total ** (1.0 / bounds.shape[0]))))
    axes = [np.linspace(lo, hi, k) for lo, hi in bounds]
    return np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])


def metric_grid(bounds, count: int) -> np.ndarray:
    """``count`` equispaced points in one dimension; the smallest covering product grid otherwise."""
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape[0] == 1:
        return np.linspace(bounds[0, 0], bounds[0, 1], count)[:, None]
    return probe_grid(bounds, count)


@dataclass
class Scenario:
    name: str
    truth: str
    variance: str
    model: dict  # {"builtin": name} or {"expression", "q", "theta_bounds"}
    bounds: list
    design: dict  # {"kind": "equispaced" | "lhs", "n": int, "replicates": int | [int, ...]}
    replications: int = 100
    rmse_points: int = 101
    score_points: int = 100
    seed: int = 0
    estimators: list = field(default_factory=lambda: [k.value for k in EstimatorKind])
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bounds = [list(map(float, b)) for b in self.bounds]
        b = np.asarray(self.bounds)
        if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 0] >= b[:, 1]):
            raise ScenarioError("bounds must be a list of [lo, hi] pairs with lo < hi")
        if self.design.get("kind") not in ("equispaced", "lhs"):
            raise ScenarioError("design kind must be 'equispaced' or 'lhs'")
        if int(self.design.get("n", 0)) < 1:
            raise ScenarioError("design needs n >= 1 unique points")
        if any(int(a) < 1 for a in self.replicate_levels):
            raise ScenarioError("replicate counts must be >= 1")
        try:
            self.zeta = InputFunction(self.truth, self.d)
            self.r = InputFunction(self.variance, self.d)
        except ex.ExprSyntaxError as exc:
            raise ScenarioError(str(exc)) from exc
        try:
            rv = self.r(probe_grid(b))
        except ex.ExprEvalError as exc:
            raise ScenarioError(f"variance expression fails on the domain: {exc}") from exc
        if np.any(rv <= 0):
            raise ScenarioError("variance expression must be strictly positive on the domain")
        self.computer_model()
        for e in self.estimators:
            estimator_label(e)

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def replicate_levels(self) -> list[int]:
        a = self.design.get("replicates", 1)
        return [int(v) for v in (a if isinstance(a, (list, tuple)) else [a])]

    def computer_model(self) -> ComputerModel:
        m = self.model
        if "builtin" in m:
            if m["builtin"] not in BUILTINS:
                raise ScenarioError(f"unknown built-in model {m['builtin']!r}")
            cm = builtin_model(m["builtin"])
            if "theta_bounds" in m:
                cm = ComputerModel.from_expression(BUILTINS[m["builtin"]]["src"], cm.d, cm.q,
                                                   m["theta_bounds"], name=cm.name)
        else:
            cm = ComputerModel.from_expression(m["expression"], self.d, int(m["q"]), m["theta_bounds"])
        if cm.d != self.d:
            raise ScenarioError(f"model has d={cm.d} but the scenario domain has d={self.d}")
        return cm

    def fit_settings(self) -> FitSettings:
        return settings_from_dict(self.fit)

    def to_dict(self) -> dict:
        keys = ("name", "truth", "variance", "model", "bounds", "design", "replications",
                "rmse_points", "score_points", "seed", "estimators", "fit")
        return {k: getattr(self, k) for k in keys}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def bundled_scenario(name: str) -> Scenario:
    try:
        txt = resources.files("hetcalib").joinpath("scenarios", f"{name}.json").read_text()
    except FileNotFoundError:
        raise ScenarioError(f"no bundled scenario {name!r}") from None
    return Scenario.from_dict(json.loads(txt))


def maximin_lhs(n: int, d: int, rng: np.random.Generator, restarts: int = 100) -> np.ndarray:
    """Best of ``restarts`` random Latin hypercubes on [0, 1]^d by minimum pairwise distance."""
    best, best_score = None, -1.0
    for _ in range(restarts):
        P = (np.argsort(rng.random((d, n)), axis=1).T + rng.random((n, d))) / n
        if n > 1:
            diff = P[:, None, :] - P[None, :, :]
            dist = np.sqrt(np.sum(diff ** 2, axis=-1))
            score = float(np.min(dist[np.triu_indices(n, 1)]))
        else:
            score = 0.0
        if score > best_score:
            best, best_score = P, score
    return best


def _rng(scenario: Scenario, replication: int, replicates: int) -> np.random.Generator:
    # one independent stream per (scenario seed, replication, replicate level)
    ss = np.random.SeedSequence(scenario.seed, spawn_key=(int(replication), int(replicates)))
    return np.random.default_rng(ss)


def design_points(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    b = np.asarray(scenario.bounds)
    n = int(scenario.design["n"])
    if scenario.design["kind"] == "equispaced":
        if scenario.d == 1:
            U = np.linspace(0.0, 1.0, n)[:, None]
        else:
            k = int(round(n ** (1.0 / scenario.d)))
            if k ** scenario.d != n:
                raise ScenarioError("an equispaced design in d > 1 needs n = k^d")
            axes = [np.linspace(0.0, 1.0, k)] * scenario.d
            U = np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])
    else:
        U = maximin_lhs(n, scenario.d, rng, int(scenario.design.get("restarts", 100)))
    return b[:, 0] + U * (b[:, 1] - b[:, 0])


def generate_dataset(scenario: Scenario, replication: int, replicates: int | None = None) -> ReplicatedDesign:
    a = scenario.replicate_levels[0] if replicates is None else int(replicates)
    rng = _rng(scenario, replication, a)
    Xu = design_points(scenario, rng)
    X = np.repeat(Xu, a, axis=0)
    rv = scenario.r(X)
    if np.any(rv <= 0):
        raise ScenarioError("variance expression is not positive at a design point")
    y = scenario.zeta(X) + rng.standard_normal(X.shape[0]) * np.sqrt(rv)
    return design_from_arrays(X, y, bounds=scenario.bounds)


@dataclass
class Oracles:
    theta_star: np.ndarray
    theta_prime: np.ndarray

    def to_dict(self):
        return {"theta_star": self.theta_star.tolist(), "theta_prime": self.theta_prime.tolist()}


def scenario_oracles(scenario: Scenario) -> Oracles:
    m = scenario.computer_model()
    ts = l2_truth_oracle(m, scenario.zeta, scenario.bounds).theta
    tp = wls_limit_oracle(m, scenario.zeta, scenario.r, scenario.bounds).theta
    return Oracles(ts, tp)


WLS_VARIANTS = {"WLS": "sample-variance", "WLS-r": "known-r"}


def estimator_label(e) -> str:
    """Canonical study label: one of the five kinds, or ``WLS-r``."""
    if str(e).strip().lower() == "wls-r":
        return "WLS-r"
    return EstimatorKind.parse(e).value


def _one_fit(label, design, scenario, model, oracles, settings, rgrid, sgrid):
    row = {"estimator": label, "failed": False, "error": ""}
    q = model.q
    t0 = time.perf_counter()
    try:
        if label in WLS_VARIANTS:
            res = fit_variant("WLS", design, model, weights=WLS_VARIANTS[label], r=scenario.r)
            theta = res.theta
            row.update(reason=res.reason, loglik=float("nan"))
            row["rmse"] = rmse(model.eval(rgrid, theta), scenario.zeta(rgrid))
            row["score"] = float("nan")
            row.update(covered=None, het_p=float("nan"))
            lo = hi = [float("nan")] * q
        else:
            res = fit_variant(label, design, model, settings)
            theta = res.theta
            row.update(reason=res.report.reason, loglik=res.log_likelihood)
            row["rmse"] = rmse(predict(res, rgrid), scenario.zeta(rgrid))
            row["score"] = predictive_score(predict(res, sgrid), scenario.zeta(sgrid), scenario.r(sgrid))
            lo = hi = [float("nan")] * q
            row["covered"] = None
            try:
                ci = res.confidence()
                lo, hi = ci.lower.tolist(), ci.upper.tolist()
                row["covered"] = bool(np.all(ci.covers(oracles.theta_star)))
            except ArithmeticError as exc:
                row["error"] = f"interval unavailable: {exc}"
            row["het_p"] = float("nan")
            if res.heteroscedastic:
                try:
                    row["het_p"] = res.het_test().p_value
                except ArithmeticError as exc:
                    row["error"] = (row["error"] + "; " if row["error"] else "") + f"test unavailable: {exc}"
        for j in range(q):
            row[f"theta{j + 1}"] = float(theta[j])
            row[f"bias{j + 1}"] = float(theta[j] - oracles.theta_star[j])
            row[f"ci_lower{j + 1}"] = float(lo[j])
            row[f"ci_upper{j + 1}"] = float(hi[j])
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        row.update(failed=True, error=f"{type(exc).__name__}: {exc}")
    row["wall_time"] = time.perf_counter() - t0
    return row


def _replication_rows(args):
    scenario_dict, oracles, labels, rep, a, settings_d = args
    scenario = Scenario.from_dict(scenario_dict)
    model = scenario.computer_model()
    settings = settings_from_dict(settings_d)
    rgrid = metric_grid(scenario.bounds, scenario.rmse_points)
    sgrid = metric_grid(scenario.bounds, scenario.score_points)
    design = generate_dataset(scenario, rep, a)
    rows = []
    for label in labels:
        row = {"replication": rep, "replicates": a}
        row.update(_one_fit(label, design, scenario, model, oracles, settings, rgrid, sgrid))
        rows.append(row)
    return rows


@dataclass
class StudyResult:
    scenario: Scenario
    oracles: Oracles
    rows: list
    settings: dict
    wall_time: float = 0.0

    def select(self, estimator=None, replicates=None) -> list[dict]:
        return [r for r in self.rows if (estimator is None or r["estimator"] == estimator)
                and (replicates is None or r["replicates"] == replicates)]

    def column(self, key, estimator=None, replicates=None, include_failed=False) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.select(estimator, replicates)
                         if include_failed or not r["failed"]], dtype=float)

    def coverage(self, estimator="HetOGP", replicates=None) -> tuple[int, int]:
        rows = self.select(estimator, replicates)
        return sum(1 for r in rows if r.get("covered") is True), len(rows)

    def summary(self) -> list[dict]:
        q = self.scenario.computer_model().q
        out = []
        labels = list(dict.fromkeys(r["estimator"] for r in self.rows))
        for a in sorted({r["replicates"] for r in self.rows}):
            for lab in labels:
                rows = self.select(lab, a)
                if not rows:
                    continue
                ok = [r for r in rows if not r["failed"]]
                s = {"estimator": lab, "replicates": a, "runs": len(rows), "failures": len(rows) - len(ok)}
                for j in range(q):
                    b = np.array([r[f"bias{j + 1}"] for r in ok])
                    s[f"median_bias{j + 1}"] = float(np.median(b)) if b.size else float("nan")
                    s[f"iqr_bias{j + 1}"] = float(np.subtract(*np.percentile(b, [75, 25]))) if b.size else float("nan")
                for key in ("rmse", "score", "wall_time"):
                    v = np.array([r[key] for r in ok], dtype=float)
                    v = v[np.isfinite(v)]
                    s[f"median_{key}"] = float(np.median(v)) if v.size else float("nan")
                cov = [r["covered"] for r in ok if r.get("covered") is not None]
                s["covered"] = int(sum(cov)) if cov else None
                out.append(s)
        return out

    def compare_scores(self, better=("HetGP", "HetOGP"), worse=("HomGP", "HomOGP"), replicates=None):
        """One-sided rank-sum p-values, scores of ``better`` above ``worse`` pairwise."""
        out = {}
        for b in better:
            for w in worse:
                x = self.column("score", b, replicates)
                y = self.column("score", w, replicates)
                x, y = x[np.isfinite(x)], y[np.isfinite(y)]
                out[(b, w)] = rank_sum_test(x, y, "greater").p_value if x.size and y.size else float("nan")
        return out


def run_study(scenario: Scenario, estimators=None, replications: int | None = None,
              replicate_levels=None, settings: FitSettings | None = None, workers: int = 1,
              progress=None) -> StudyResult:
    """Fit every estimator on every replication; failures become flagged rows.

    ``estimators`` may include ``"WLS-r"`` (WLS with the known variance function)
    besides the five kinds.  Results are ordered by replication regardless of
    ``workers``.
    """
    t0 = time.perf_counter()
    labels = [estimator_label(e) for e in (estimators or scenario.estimators)]
    reps = scenario.replications if replications is None else int(replications)
    levels = scenario.replicate_levels if replicate_levels is None else [int(a) for a in replicate_levels]
    settings = settings or scenario.fit_settings()
    oracles = scenario_oracles(scenario)
    sd = settings_dict(settings)
    jobs = [(scenario.to_dict(), oracles, labels, k, a, sd) for a in levels for k in range(reps)]
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rr in enumerate(pool.map(_replication_rows, jobs)):
                rows.extend(rr)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            rows.extend(_replication_rows(job))
            if progress:
                progress(i + 1, len(jobs))
    return StudyResult(scenario, oracles, rows, sd, time.perf_counter() - t0)


_LONG_SKIP = ("replication", "replicates", "estimator", "error")


def long_rows(result: StudyResult):
    for r in result.rows:
        for k, v in r.items():
            if k in _LONG_SKIP:
                continue
            if isinstance(v, bool) or v is None:
                v = "" if v is None else int(v)
            yield r["replication"], r["replicates"], r["estimator"], k, v


def _fmt(v):
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else f"{v:.4g}"
    return "" if v is None else str(v)


def summary_markdown(result: StudyResult) -> str:
    summ = result.summary()
    if not summ:
        return ""
    cols = list(summ[0].keys())
    lines = [f"# {result.scenario.name}", "",
             "theta* = " + ", ".join(f"{v:.6g}" for v in result.oracles.theta_star)
             + "; theta' = " + ", ".join(f"{v:.6g}" for v in result.oracles.theta_prime), "",
             "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for s in summ:
        lines.append("| " + " | ".join(_fmt(s[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def to_json(result: StudyResult) -> str:
    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return None
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v

    doc = {"scenario": result.scenario.to_dict(), "oracles": result.oracles.to_dict(),
           "settings": result.settings,
           "rows": [{k: clean(v) for k, v in r.items() if k != "wall_time"} for r in result.rows],
           "summary": [{k: clean(v) for k, v in s.items() if k != "median_wall_time"}
                       for s in result.summary()]}
    return json.dumps(doc, indent=1, sort_keys=True)


def emit_tables(result: StudyResult, outdir, formats=("csv", "json", "markdown")) -> dict:
    """Write the long CSV, JSON document and markdown summary; returns written paths."""
    if not result.rows:
        raise ValueError("empty study result")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "csv" in formats:
        p = out / "results_long.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replication", "replicates", "estimator", "metric", "value"])
            for rep, a, est, k, v in long_rows(result):
                w.writerow([rep, a, est, k, repr(v) if isinstance(v, float) else v])
        paths["csv"] = p
        p = out / "summary.csv"
        summ = result.summary()
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(summ[0].keys()))
            w.writeheader()
            w.writerows(summ)
        paths["summary_csv"] = p
    if "json" in formats:
        p = out / "study.json"
        p.write_text(to_json(result))
        paths["json"] = p
    if "markdown" in formats:
        p = out / "summary.md"
        p.write_text(summary_markdown(result))
        paths["markdown"] = p
    return paths
