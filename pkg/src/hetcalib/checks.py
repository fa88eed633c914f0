"""Pass/fail checks computed from a finished study."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulation import StudyResult


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool | None  # None: not applicable to this study
    detail: str

    def line(self) -> str:
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]
        return f"[{tag}] {self.name}: {self.detail}"


def _labels(result):
    return {r["estimator"] for r in result.rows}


def coverage_check(result: StudyResult, estimator="HetOGP", lo=0.85, hi=0.99, min_runs=20) -> Check:
    name = f"{estimator} 95% interval coverage of theta*"
    if estimator not in _labels(result):
        return Check(name, None, f"{estimator} not in the study")
    level = min(r["replicates"] for r in result.rows)
    c, total = result.coverage(estimator, level)
    if total < min_runs:
        return Check(name, None, f"{c}/{total} covered; too few replications to judge")
    ok = lo * total <= c <= hi * total
    return Check(name, ok, f"{c}/{total} covered (target {lo:.0%}..{hi:.0%})")


def median_abs_bias(result, estimator, replicates=None, j=1) -> float:
    b = result.column(f"bias{j}", estimator, replicates)
    return float(abs(np.median(b))) if b.size else float("nan")


def ranking_check(result: StudyResult, alpha=0.01) -> Check:
    name = "estimator ranking (bias and predictive score)"
    need = {"WLS", "HomGP", "HomOGP", "HetGP", "HetOGP"}
    if not need <= _labels(result):
        return Check(name, None, "needs all five estimators")
    b = {k: median_abs_bias(result, k) for k in ("HetOGP", "WLS", "HomOGP")}
    bias_ok = b["HetOGP"] < b["WLS"] and b["HetOGP"] <= b["HomOGP"]
    p = result.compare_scores()
    score_ok = all(v < alpha for v in p.values())
    pdesc = ", ".join(f"{a}>{c} p={v:.2g}" for (a, c), v in p.items())
    detail = (f"|median bias| HetOGP={b['HetOGP']:.4f} WLS={b['WLS']:.4f} HomOGP={b['HomOGP']:.4f}; "
              f"{pdesc}")
    return Check(name, bias_ok and score_ok, detail)


def iqr(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.subtract(*np.percentile(v, [75, 25]))) if v.size else float("nan")


def monotonicity_check(result: StudyResult, estimator="HetOGP", low=2, high=10, need=2) -> Check:
    name = f"{estimator} bias IQR shrinks from {low} to {high} replicates"
    levels = {r["replicates"] for r in result.rows}
    if estimator not in _labels(result) or not {low, high} <= levels:
        return Check(name, None, f"needs {estimator} at replicate levels {low} and {high}")
    q = result.scenario.computer_model().q
    parts, wins = [], 0
    for j in range(1, q + 1):
        a = iqr(result.column(f"bias{j}", estimator, low))
        b = iqr(result.column(f"bias{j}", estimator, high))
        wins += b < a
        parts.append(f"theta{j}: {a:.4f} -> {b:.4f}")
    return Check(name, wins >= min(need, q), "; ".join(parts) + f" ({wins}/{q} shrink)")


def wls_drift_check(result: StudyResult, estimator="WLS-r", gap=0.02, k=3.0) -> Check:
    """Mean of the WLS estimates sits near the weighted limit, not near theta*."""
    name = f"{estimator} mean tracks theta' rather than theta*"
    if estimator not in _labels(result):
        return Check(name, None, f"{estimator} not in the study")
    t = result.column("theta1", estimator)
    ts, tp = float(result.oracles.theta_star[0]), float(result.oracles.theta_prime[0])
    if t.size < 2:
        return Check(name, None, "needs at least two fits")
    mean, se = float(np.mean(t)), float(np.std(t, ddof=1) / np.sqrt(t.size))
    ok = abs(tp - ts) > gap and abs(mean - tp) < k * se and abs(mean - ts) >= k * se
    return Check(name, ok, f"mean={mean:.4f} se={se:.4f} theta'={tp:.4f} theta*={ts:.4f} "
                           f"(|mean-theta'|={abs(mean - tp) / se:.2f} se, |mean-theta*|={abs(mean - ts) / se:.2f} se)")


def study_checks(result: StudyResult) -> list[Check]:
    return [wls_drift_check(result), coverage_check(result), ranking_check(result),
            monotonicity_check(result)]
