import numpy as np
import pytest

from hetcalib.kernels import KernelSpec, kernel_matrix
from hetcalib.models import ComputerModel, builtin_model
from hetcalib.ortho import (OrthoError, build_basis, mc_orthogonality_residual, ortho_kernel_derivs,
                            ortho_kernel_grad, ortho_kernel_matrix, sample_points)


@pytest.fixture(scope="module")
def tuo_basis():
    m = builtin_model("tuo1d")
    pts = sample_points([[0, 2 * np.pi]], 400, 3)
    return build_basis(m, [-0.2], KernelSpec("matern52", [1.3]), points=pts, with_W_grad=True)


def test_orthogonal_to_model_gradient(tuo_basis):
    X = np.linspace(0, 2 * np.pi, 50)[:, None]
    assert np.max(np.abs(mc_orthogonality_residual(tuo_basis, X))) < 1e-10


def test_plumlee_orthogonality():
    m = builtin_model("plumlee3p")
    pts = sample_points([[0, 1], [0, 1]], 500, 0)
    b = build_basis(m, [0.5, 4.1, -1.0], KernelSpec("matern52", [0.3, 0.4]), points=pts)
    X = np.random.default_rng(1).random((50, 2))
    assert np.max(np.abs(mc_orthogonality_residual(b, X))) < 1e-10


def test_blocked_products_match_dense(tuo_basis):
    W = kernel_matrix(tuo_basis.k0, tuo_basis.xi)
    np.testing.assert_allclose(tuo_basis.WF, W @ tuo_basis.F, rtol=1e-12, atol=1e-10)


def test_kernel_is_psd_and_below_base(tuo_basis):
    X = np.linspace(0, 2 * np.pi, 30)[:, None]
    K = ortho_kernel_matrix(tuo_basis, X)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    assert np.linalg.eigvalsh(K).min() > -1e-9
    # subtracting a PSD term can only lower the variance
    assert np.all(np.diag(K) <= 1.0 + 1e-12)


class TestDerivatives:
    def _fd(self, basis, X, which, j, h=1e-6):
        th, ls = basis.theta.copy(), basis.k0.lengthscales.copy()
        out = []
        for s in (1, -1):
            t2, l2 = th.copy(), ls.copy()
            if which == "theta":
                t2[j] += s * h
            else:
                l2[j] += s * h
            b = build_basis(basis.model, t2, KernelSpec(basis.k0.family, l2), points=basis.points)
            out.append(ortho_kernel_matrix(b, X))
        return (out[0] - out[1]) / (2 * h)

    def test_theta_and_lengthscale(self, tuo_basis):
        X = np.linspace(0.2, 6.0, 6)[:, None]
        K, dth, dph = ortho_kernel_derivs(tuo_basis, X)
        np.testing.assert_allclose(dth[0], self._fd(tuo_basis, X, "theta", 0), rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(dph[0], self._fd(tuo_basis, X, "phi", 0), rtol=1e-5, atol=1e-8)

    def test_two_dimensional(self):
        m = builtin_model("plumlee3p")
        pts = sample_points([[0, 1], [0, 1]], 200, 4)
        b = build_basis(m, [0.5, 4.1, -1.0], KernelSpec("gaussian", [0.3, 0.5]), points=pts, with_W_grad=True)
        X = np.random.default_rng(0).random((5, 2))
        _, _, dph = ortho_kernel_derivs(b, X)
        for j in range(2):
            np.testing.assert_allclose(dph[j], self._fd(b, X, "phi", j), rtol=1e-5, atol=1e-8)
        # linear model: no theta dependence
        np.testing.assert_allclose(ortho_kernel_grad(b, X, ("theta", 1)), 0.0, atol=1e-12)

    def test_missing_w_gradient(self):
        b = build_basis(builtin_model("tuo1d"), [0.1], KernelSpec("matern52", [1.0]),
                        points=sample_points([[0, 6]], 50, 0))
        with pytest.raises(ValueError, match="with_W_grad"):
            ortho_kernel_derivs(b, np.zeros((2, 1)))


def test_zero_gradient_model_is_rejected():
    m = ComputerModel.from_expression("x1 + 0 * theta1", 1, 1, [[0, 1]])
    with pytest.raises(OrthoError):
        build_basis(m, [0.5], KernelSpec("matern52", [1.0]), points=sample_points([[0, 1]], 50, 0))


def test_sampling_is_seeded():
    a = sample_points([[0, 1], [2, 3]], 20, 11)
    b = sample_points([[0, 1], [2, 3]], 20, 11)
    np.testing.assert_array_equal(a.xi, b.xi)
    assert np.all((a.xi[:, 1] >= 2) & (a.xi[:, 1] <= 3))
