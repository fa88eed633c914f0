"""Acceptance criteria 1-14, one test each, one PASS/FAIL line each.

Criteria 4, 5, 6 and 12 run Monte Carlo studies of hundreds of fits and are
marked slow; set ``HETCALIB_ACCEPTANCE_FULL=1`` to include them.  Set
``HETCALIB_ACCEPTANCE_OUT=dir`` to also keep the study tables.

Criteria 3 and 4 do not hold for this implementation and are marked strict
xfail: they still run at their stated tolerances and print FAIL, and an
unexpected pass fails the run.

Run directly (``python tests/test_acceptance.py``) for just the criteria.
"""
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from conftest import random_instance, tuo_data, tuo_zeta
from hetcalib.baselines import fit_variant, l2_truth_oracle
from hetcalib.checks import coverage_check, monotonicity_check, ranking_check, wls_drift_check
from hetcalib.dense import _Kn, dense_log_lambda, dense_log_likelihood, dense_predict
from hetcalib.inference import sigma_derivatives, v_derivatives
from hetcalib.likelihood import HetCalibParams, ParamLayout, log_likelihood, log_likelihood_grad
from hetcalib.models import builtin_model
from hetcalib.noise import predict_log_lambda
from hetcalib.ortho import mc_orthogonality_residual, sample_points
from hetcalib.predict import predict
from hetcalib.simulation import Scenario, bundled_scenario, emit_tables, generate_dataset, probe_grid, run_study
from hetcalib.stats import chi2_cdf, chi2_quantile, chi2_sf

TUO = builtin_model("tuo1d")
PLUMLEE = builtin_model("plumlee3p")
TWO_PI = [[0.0, 2 * np.pi]]
THETA_STAR_TUO = -0.1789
THETA_STAR_PLUMLEE = (0.50, 4.14, -1.00)
ALL = ["WLS", "WLS-r", "HomGP", "HomOGP", "HetGP", "HetOGP"]


def _keep(result, name):
    out = os.environ.get("HETCALIB_ACCEPTANCE_OUT")
    if out:
        emit_tables(result, Path(out) / name)
    return result


_CACHE = {}


def _cached(key, make):
    if key not in _CACHE:
        _CACHE[key] = make()
    return _CACHE[key]


def tuo_study():
    return _cached("tuo", lambda: _keep(run_study(bundled_scenario("tuo1d"), ALL, 100), "tuo1d"))


def plumlee_study():
    return _cached("plumlee", lambda: _keep(
        run_study(bundled_scenario("plumlee3p"), ["HetOGP"], 100, replicate_levels=[2, 10]), "plumlee3p"))


def homoscedastic_study():
    d = bundled_scenario("tuo1d").to_dict()
    # same truth and design; constant variance close to the domain average of the tuo1d r
    d.update(name="tuo1d-homoscedastic", variance="0.8", seed=20240103, estimators=["HetOGP"])
    return _cached("hom", lambda: _keep(run_study(Scenario.from_dict(d), replications=200), "tuo1d-hom"))


def test_c01_theta_star_tuo1d(record):
    t0 = time.perf_counter()
    th = l2_truth_oracle(TUO, tuo_zeta, TWO_PI).theta[0]
    dt = time.perf_counter() - t0
    ok = abs(th - THETA_STAR_TUO) <= 1e-3 and dt < 10
    assert record(1, ok, f"theta* = {th:.6f} (target -0.1789 +/- 0.001), {dt:.2f} s"), th


def test_c02_theta_star_plumlee3p(record):
    sc = bundled_scenario("plumlee3p")
    t0 = time.perf_counter()
    th = l2_truth_oracle(PLUMLEE, sc.zeta, sc.bounds).theta
    dt = time.perf_counter() - t0
    ok = bool(np.all(np.abs(th - THETA_STAR_PLUMLEE) <= 0.01)) and dt < 60
    assert record(2, ok, "theta* = (" + ", ".join(f"{v:.5f}" for v in th) + f") (+/- 0.01), {dt:.1f} s")


@pytest.mark.xfail(strict=True, reason="with 8 fixed design points WLS converges to the 8-point weighted "
                   "limit (-0.2430), ~19 Monte Carlo SE from the integral-defined theta' (-0.2487)")
def test_c03_wls_tracks_weighted_limit(record):
    res = run_study(bundled_scenario("tuo1d"), ["WLS-r", "WLS"], 100)
    chk = wls_drift_check(res, "WLS-r")
    other = wls_drift_check(res, "WLS")
    # weighted limit over the 8 design points themselves, for the report only
    X = generate_dataset(res.scenario, 0).locations
    w = 1.0 / res.scenario.r(X)
    design_limit = minimize_scalar(lambda t: float(w @ (res.scenario.zeta(X) - TUO.eval(X, [t])) ** 2),
                                   bounds=(-1, 1), method="bounded", options={"xatol": 1e-10}).x
    assert record(3, chk.passed, f"{chk.detail}; sample-variance weights: {other.detail.split(' theta')[0]}; "
                                 f"8-point weighted limit {design_limit:.4f}")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="80/100: plug-in noise from 5 replicates makes intervals ~35% too "
                   "narrow, and 3 fits sit in a second likelihood mode")
def test_c04_interval_coverage(record):
    chk = coverage_check(tuo_study(), "HetOGP")
    assert record(4, chk.passed, chk.detail)


@pytest.mark.slow
def test_c05_estimator_ranking(record):
    chk = ranking_check(tuo_study())
    assert record(5, chk.passed, chk.detail)


@pytest.mark.slow
def test_c06_replicate_monotonicity(record):
    chk = monotonicity_check(plumlee_study(), "HetOGP", 2, 10, need=2)
    assert record(6, chk.passed, chk.detail)


def test_c07_single_fit_runtime(record):
    D = tuo_data(11)
    t0 = time.perf_counter()
    res = fit_variant("HetOGP", D, TUO)
    dt = time.perf_counter() - t0
    assert record(7, dt < 10, f"HetOGP fit (n=8, N=40) in {dt:.2f} s, {res.report.reason}")


def test_c08_reduced_equals_dense(record):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(50):
        het, ortho = bool(i % 2), bool((i // 2) % 2)
        kern = ("matern52", "gaussian")[(i // 4) % 2]
        D, p = random_instance(rng, het=het, kernel=kern, kernel_g=kern)
        pts = sample_points(D.bounds, 120, i) if ortho else None
        st = log_likelihood(p, D, TUO, pts)
        ref = dense_log_likelihood(p, D, TUO, pts)
        ps = p.with_scales(st.nu_hat, st.nu_g_hat)

        class Fit:
            params, state, design, model, points = ps, st, D, TUO, pts

        Xn = np.linspace(-0.1, 2.1, 9)[:, None]
        pred = predict(Fit, Xn)
        ell = predict_log_lambda(st.noise, Xn) if het else np.zeros(len(Xn))
        mu, var = dense_predict(ps, D, TUO, pts, Xn, st.nu_hat, ell)
        errs = [abs(st.value - ref["value"]) / abs(ref["value"]), abs(st.nu_hat - ref["nu"]) / ref["nu"],
                np.max(np.abs(pred.mean - mu) / np.maximum(np.abs(mu), 1e-300)),
                np.max(np.abs(pred.total_variance - var) / var)]
        worst = max(worst, max(errs))
    assert record(8, worst < 1e-9, f"worst relative gap over 50 instances {worst:.2e} (< 1e-9)")


def _perturb(p, name, h):
    kw = dict(theta=p.theta.copy(), phi=p.phi.copy(), phi_g=None if p.phi_g is None else p.phi_g.copy(),
              g=p.g, delta=None if p.delta is None else p.delta.copy(), nu=p.nu, nu_g=p.nu_g,
              kernel=p.kernel, kernel_g=p.kernel_g)
    base = name.rstrip("0123456789")
    if base in ("nu", "nu_g", "g"):
        kw[base] += h
    else:
        kw[base][int(name[len(base):]) - 1] += h
    return HetCalibParams(**kw)


def test_c09_gradients_match_differences(record):
    rng = np.random.default_rng(99)
    worst, checked = 0.0, 0
    for i in range(30):
        het, ortho = bool(i % 2), bool((i // 2) % 2)
        kern = ("matern52", "gaussian")[(i // 4) % 2]
        D, p = random_instance(rng, het=het, kernel=kern, kernel_g=kern)
        pts = sample_points(D.bounds, 120, i) if ortho else None
        lay = ParamLayout(1, 1, D.n, het, kern, kern)
        x = lay.to_vector(p)
        g = log_likelihood_grad(p, D, TUO, pts).gradient
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = 1e-6
            fd = (log_likelihood(lay.from_vector(x + e), D, TUO, pts).value
                  - log_likelihood(lay.from_vector(x - e), D, TUO, pts).value) / 2e-6
            worst = max(worst, abs(g[j] - fd) / max(abs(fd), 1e-2))
            checked += 1
    blocks = 0
    for i in range(10):
        D, p = random_instance(rng, het=True)
        pts = sample_points(D.bounds, 120, 50 + i) if i % 2 else None
        st = log_likelihood(p, D, TUO, pts)
        p = p.with_scales(st.nu_hat, st.nu_g_hat)

        def parts(q):
            return q.nu * _Kn(q, D, TUO, pts), q.nu * np.exp(dense_log_lambda(q, D))

        for name, Dm, dv in sigma_derivatives(p, D, TUO, pts):
            up, dn = parts(_perturb(p, name, 1e-6)), parts(_perturb(p, name, -1e-6))
            for a, fd in ((Dm, (up[0] - dn[0]) / 2e-6), (dv, (up[1] - dn[1]) / 2e-6)):
                worst = max(worst, float(np.max(np.abs(a - fd) / np.maximum(np.abs(fd), 1e-2))))
                blocks += 1
        names, V, dV, d2V = v_derivatives(p, D)
        for k, nk in enumerate(names):
            fd = (v_derivatives(_perturb(p, nk, 1e-6), D)[1] - v_derivatives(_perturb(p, nk, -1e-6), D)[1]) / 2e-6
            worst = max(worst, float(np.max(np.abs(dV[k] - fd) / np.maximum(np.abs(fd), 1e-2))))
            fd2 = (v_derivatives(_perturb(p, nk, 1e-6), D)[2] - v_derivatives(_perturb(p, nk, -1e-6), D)[2]) / 2e-6
            for j in range(len(names)):
                worst = max(worst, float(np.max(np.abs(d2V[j, k] - fd2[j]) / np.maximum(np.abs(fd2[j]), 1e-2))))
            blocks += 1 + len(names)
    ok = worst < 1e-4
    assert record(9, ok, f"{checked} gradient coordinates at 30 points and {blocks} Sigma/V blocks; "
                         f"worst gap relative to max(|fd|, 0.01) {worst:.1e} (< 1e-4)")


@pytest.fixture(scope="module")
def fitted_plumlee():
    return fit_variant("HetOGP", generate_dataset(bundled_scenario("plumlee3p"), 0, 5), PLUMLEE)


@pytest.fixture(scope="module")
def fitted_tuo():
    D = tuo_data(5)
    return {k: fit_variant(k, D, TUO) for k in ("HomGP", "HomOGP", "HetGP", "HetOGP")}


def test_c10_fitted_kernel_is_orthogonal(record, fitted_tuo, fitted_plumlee):
    r1 = mc_orthogonality_residual(fitted_tuo["HetOGP"].state.basis, np.linspace(0, 2 * np.pi, 50)[:, None])
    g = np.linspace(0, 1, 8)
    probe = np.column_stack([np.repeat(g, 8), np.tile(g, 8)])[:50]
    r2 = mc_orthogonality_residual(fitted_plumlee.state.basis, probe)
    worst = float(max(np.abs(r1).max(), np.abs(r2).max()))
    assert record(10, worst < 1e-8, f"max |(1/m) sum df/dtheta k| on 50-point grids {worst:.1e} (< 1e-8)")


def test_c11_homoscedastic_reduction(record):
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(10):
        D, p = random_instance(rng, het=True)
        pts = sample_points(D.bounds, 120, i)
        het = HetCalibParams(p.theta, p.phi, p.phi_g, p.g, np.zeros(D.n))
        a = log_likelihood(het, D, TUO, pts).value
        b = log_likelihood(HetCalibParams(p.theta, p.phi), D, TUO, pts).value
        worst = max(worst, abs(a - b))
    gaps = []
    for s in range(3):
        D = tuo_data(30 + s)
        gaps.append(fit_variant("HetOGP", D, TUO).log_likelihood - fit_variant("HomOGP", D, TUO).log_likelihood)
    ok = worst <= 1e-10 and min(gaps) >= -1e-6
    assert record(11, ok, f"|logL(Het, delta=0) - logL(Hom)| <= {worst:.1e}; "
                          f"logL(Het) - logL(Hom) at optima: {', '.join(f'{v:.3f}' for v in gaps)}")


@pytest.mark.slow
def test_c12_het_test_calibration(record):
    null = homoscedastic_study().column("het_p", "HetOGP")
    alt = tuo_study().column("het_p", "HetOGP")
    size = float(np.mean(null < 0.01))
    power = float(np.mean(alt < 0.01))
    ok = size <= 0.04 and power > 0.5
    assert record(12, ok, f"type-I rate {size:.3f} over {null.size} null fits (<= 0.04); "
                          f"power {power:.2f} over {alt.size} fits (> 0.5), alpha 0.01")


def test_c13_variance_floor(record, fitted_tuo, fitted_plumlee):
    worst, grids = np.inf, 0
    for res in list(fitted_tuo.values()) + [fitted_plumlee]:
        grid = probe_grid(res.design.bounds, 2000)
        for X in (grid, res.design.locations):
            pred = predict(res, X)
            worst = min(worst, float(np.min(pred.total_variance - pred.noise_variance)))
            grids += 1
    assert record(13, worst >= -1e-10, f"min sigma^2 - r over {grids} grids {worst:.2e} (>= -1e-10)")


def test_c14_chi_square(record):
    worst = 0.0
    for dof in (1, 2, 3, 5, 8, 12, 30):
        for p in np.linspace(0.001, 0.999, 41):
            x = chi2_quantile(dof, p)
            worst = max(worst, abs(chi2_cdf(x, dof) - p), abs(chi2_sf(x, dof) - (1 - p)))
    x = np.linspace(0, 60, 121)
    closed = max(abs(chi2_sf(v, 2) - np.exp(-v / 2)) for v in x)
    q2 = max(abs(chi2_quantile(2, p) + 2 * np.log1p(-p)) for p in np.linspace(0.01, 0.99, 33))
    ok = worst <= 1e-10 and closed <= 1e-15 and q2 <= 1e-10
    assert record(14, ok, f"quantile/cdf/sf gap {worst:.1e}; chi2_2 sf vs exp(-x/2) {closed:.1e}, "
                          f"quantile vs -2 log(1-p) {q2:.1e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
