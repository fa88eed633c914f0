"""Chi-square distribution and a Wilcoxon rank-sum test, self-contained.

The chi-square routines go through the regularized incomplete gamma function:
a power series below ``x = a + 1`` and a Lentz continued fraction above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-16
_TINY = 1e-300


def _gamma_p_series(a, x):
    term = total = 1.0 / a
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a, x):
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = _TINY if abs(d) < _TINY else d
        c = b + an / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("gamma_p needs a > 0 and x >= 0")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_cf(a, x)


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("gamma_q needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_cf(a, x)


def _check_dof(dof):
    if not (dof >= 1 and np.isfinite(dof)):
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")


def chi2_sf(x: float, dof: float) -> float:
    _check_dof(dof)
    if x < 0 or not np.isfinite(x):
        if x == np.inf:
            return 0.0
        raise ValueError(f"chi2_sf needs x >= 0, got {x}")
    if dof == 2:
        return math.exp(-0.5 * x)
    return gamma_q(0.5 * dof, 0.5 * x)


def chi2_cdf(x: float, dof: float) -> float:
    _check_dof(dof)
    if x < 0:
        raise ValueError(f"chi2_cdf needs x >= 0, got {x}")
    if dof == 2:
        return -math.expm1(-0.5 * x)
    return gamma_p(0.5 * dof, 0.5 * x)


def chi2_pdf(x: float, dof: float) -> float:
    if x <= 0:
        return 0.0 if dof > 2 else (0.5 if dof == 2 else math.inf)
    k = 0.5 * dof
    return math.exp((k - 1) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(dof: float, p: float) -> float:
    """x with P(X <= x) = p for X ~ chi2(dof)."""
    _check_dof(dof)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if dof == 2:
        return -2.0 * math.log1p(-p)
    # Wilson-Hilferty start, then safeguarded Newton on whichever tail is smaller
    z = normal_quantile(p)
    c = 2.0 / (9.0 * dof)
    x = max(dof * (1.0 - c + z * math.sqrt(c)) ** 3, 1e-8)
    upper = p > 0.5
    target = 1.0 - p if upper else p

    def resid(t):
        return (chi2_sf(t, dof) - target) if upper else (chi2_cdf(t, dof) - target)

    lo, hi = 0.0, max(2.0 * x, dof + 10.0)
    while resid(hi) * (1 if upper else -1) > 0:
        hi *= 2.0
    for _ in range(200):
        r = resid(x)
        if (r > 0) == upper:
            lo = x
        else:
            hi = x
        pdf = chi2_pdf(x, dof)
        step = r / pdf if upper else -r / pdf
        nx = x + step if pdf > 0 else 0.5 * (lo + hi)
        if not (lo < nx < hi):
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= 1e-15 * max(1.0, x):
            return nx
        x = nx
    return x


def normal_quantile(p: float) -> float:
    """Standard normal quantile (Acklam's rational approximation plus one Halley step)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00)
    pl = 0.02425
    if p < pl:
        q = math.sqrt(-2 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    elif p <= 1 - pl:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    for _ in range(2):
        e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
        u = e * math.sqrt(2 * math.pi) * math.exp(0.5 * x * x)
        x = x - u / (1 + 0.5 * x * u)
    return x


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass(frozen=True)
class RankSumResult:
    statistic: float  # Mann-Whitney U of the first sample
    p_value: float
    method: str


def _exact_u_counts(n1, n2):
    # number of arrangements with U = u, via the standard recurrence on (n1, n2)
    table = {}

    def count(i, j):
        if i == 0 or j == 0:
            out = np.zeros(i * j + 1)
            out[0] = 1.0
            return out
        key = (i, j)
        if key not in table:
            a = count(i - 1, j)  # largest element from sample 1 beats all j
            b = count(i, j - 1)
            out = np.zeros(i * j + 1)
            out[j:j + a.size] += a
            out[:b.size] += b
            table[key] = out
        return table[key]

    return count(n1, n2)


def rank_sum_test(x, y, alternative: str = "greater", exact_limit: int = 20) -> RankSumResult:
    """Wilcoxon-Mann-Whitney test of ``x`` stochastically larger than ``y``.

    Exact null distribution when both samples have at most ``exact_limit``
    values and there are no ties; otherwise a normal approximation with tie
    correction and continuity correction.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    n1, n2 = x.size, y.size
    allv = np.concatenate([x, y])
    order = np.argsort(allv, kind="mergesort")
    ranks = np.empty(allv.size)
    sv = allv[order]
    i = 0
    tie_term = 0.0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        t = j - i + 1
        tie_term += t ** 3 - t
        i = j + 1
    U = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    if max(n1, n2) <= exact_limit and tie_term == 0:
        counts = _exact_u_counts(n1, n2)
        pmf = counts / counts.sum()
        u = int(round(U))
        upper = float(pmf[u:].sum())
        lower = float(pmf[:u + 1].sum())
        p = {"greater": upper, "less": lower, "two-sided": min(1.0, 2 * min(upper, lower))}[alternative]
        return RankSumResult(U, p, "exact")
    N = n1 + n2
    mu = n1 * n2 / 2.0
    sd = math.sqrt(n1 * n2 / 12.0 * ((N + 1) - tie_term / (N * (N - 1))))
    if sd == 0:
        return RankSumResult(U, 1.0, "normal")
    if alternative == "greater":
        p = normal_sf((U - mu - 0.5) / sd)
    elif alternative == "less":
        p = 1.0 - normal_sf((U - mu + 0.5) / sd)
    else:
        p = min(1.0, 2 * normal_sf((abs(U - mu) - 0.5) / sd))
    return RankSumResult(U, p, "normal")
