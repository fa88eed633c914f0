import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize

from conftest import tuo_data, tuo_r, tuo_zeta
from hetcalib.baselines import (EstimatorKind, fit_wls, gauss_legendre_grid, l2_truth_oracle,
                                variant_settings, wls_limit_oracle)
from hetcalib.design import design_from_arrays
from hetcalib.models import ComputerModel

TWO_PI = [[0.0, 2 * np.pi]]


class TestQuadrature:
    @given(st.integers(0, 19), st.floats(-3, 3), st.floats(0.5, 4))
    def test_polynomials_exact(self, k, lo, width):
        X, W = gauss_legendre_grid([[lo, lo + width]], 40, 4)
        hi = lo + width
        exact = (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * width)
        assert W @ X[:, 0] ** k == pytest.approx(exact, rel=1e-10, abs=1e-10)

    def test_two_dimensional_weights(self):
        X, W = gauss_legendre_grid([[0, 1], [0, 2]], 20, 2)
        assert X.shape == (400, 2) and W.sum() == pytest.approx(1.0)
        assert W @ (X[:, 0] * X[:, 1]) == pytest.approx(0.5)

    def test_panels_must_divide(self):
        with pytest.raises(ValueError):
            gauss_legendre_grid(TWO_PI, 50, 20)


class TestOracles:
    def test_theta_star_against_scipy_quad(self, tuo_model):
        def crit(t):
            f = lambda x: (np.exp(x / 10) * np.sin(x) - tuo_model.eval(np.array([[x]]), np.array([t]))[0]) ** 2
            return integrate.quad(f, 0, 2 * np.pi, limit=200)[0]

        ref = optimize.minimize_scalar(crit, bounds=(-0.3, -0.1), method="bounded",
                                       options=dict(xatol=1e-9)).x
        got = l2_truth_oracle(tuo_model, tuo_zeta, TWO_PI).theta[0]
        assert got == pytest.approx(ref, abs=1e-6)

    def test_constant_variance_gives_same_limit(self, tuo_model):
        a = l2_truth_oracle(tuo_model, tuo_zeta, TWO_PI).theta
        b = wls_limit_oracle(tuo_model, tuo_zeta, lambda X: np.full(len(X), 0.3), TWO_PI).theta
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_weighted_limit_differs(self, tuo_model):
        tp = wls_limit_oracle(tuo_model, tuo_zeta, tuo_r, TWO_PI).theta[0]
        ts = l2_truth_oracle(tuo_model, tuo_zeta, TWO_PI).theta[0]
        assert abs(tp - ts) > 0.05

    def test_nonpositive_r_rejected(self, tuo_model):
        with pytest.raises(ValueError):
            wls_limit_oracle(tuo_model, tuo_zeta, lambda X: np.zeros(len(X)), TWO_PI)

    def test_resolution_stable(self, tuo_model):
        a = l2_truth_oracle(tuo_model, tuo_zeta, TWO_PI, nodes_per_dim=200).theta
        b = l2_truth_oracle(tuo_model, tuo_zeta, TWO_PI, nodes_per_dim=400).theta
        np.testing.assert_allclose(a, b, atol=1e-8)


class TestWLS:
    def test_exact_linear_case(self):
        # linear model, known weights: closed-form weighted least squares
        m = ComputerModel.from_expression("theta1 + theta2 * x1", 1, 2, [[-5, 5], [-5, 5]])
        X = np.repeat(np.linspace(0, 1, 6), 3)
        rng = np.random.default_rng(0)
        y = 1.0 + 2.0 * X + 0.1 * rng.standard_normal(X.size)
        D = design_from_arrays(X, y)
        res = fit_wls(D, m, "sample-variance")
        Xu = D.locations[:, 0]
        A = np.column_stack([np.ones_like(Xu), Xu])
        w = 1 / D.unbiased_variance()
        ref = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * D.ybar))
        np.testing.assert_allclose(res.theta, ref, atol=1e-5)

    def test_weighting_options(self, tuo_model):
        D = tuo_data(0)
        a = fit_wls(D, tuo_model, "known-r", r=tuo_r)
        np.testing.assert_allclose(a.weights, tuo_r(D.locations).ravel())
        u = fit_wls(D, tuo_model, "unit")
        np.testing.assert_array_equal(u.weights, 1.0)

    def test_errors(self, tuo_model):
        D = tuo_data(0, reps=1)
        with pytest.raises(ValueError, match="two replicates"):
            fit_wls(D, tuo_model)
        with pytest.raises(ValueError, match="need the variance"):
            fit_wls(tuo_data(0), tuo_model, "known-r")
        with pytest.raises(ValueError, match="unknown weighting"):
            fit_wls(tuo_data(0), tuo_model, "cubic")


class TestEstimatorKind:
    @pytest.mark.parametrize("s,kind", [("hetogp", EstimatorKind.HETOGP), (" HomGP ", EstimatorKind.HOMGP),
                                        ("WLS", EstimatorKind.WLS)])
    def test_parse(self, s, kind):
        assert EstimatorKind.parse(s) is kind

    def test_parse_rejects(self):
        with pytest.raises(ValueError, match="unknown estimator"):
            EstimatorKind.parse("krig")

    def test_toggles(self):
        s = variant_settings("HetGP")
        assert s.heteroscedastic and not s.orthogonal
        s = variant_settings("HomOGP")
        assert s.orthogonal and not s.heteroscedastic
        with pytest.raises(ValueError):
            variant_settings("WLS")
