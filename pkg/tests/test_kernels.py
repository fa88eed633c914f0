import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetcalib.kernels import (KernelSpec, kernel_eval, kernel_grad_input, kernel_grad_lengthscale,
                              kernel_hess_lengthscale, kernel_matrix)

FAMILIES = ["matern52", "gaussian"]


def closed_form(family, r):
    if family == "gaussian":
        return np.exp(-0.5 * r ** 2)
    s = np.sqrt(5.0) * r
    return (1 + s + s ** 2 / 3) * np.exp(-s)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("r", [0.0, 0.3, 1.0, 2.5])
def test_one_dimensional_values(family, r):
    k = KernelSpec(family, [0.7])
    assert kernel_eval(k, [0.1], [0.1 + 0.7 * r]) == pytest.approx(closed_form(family, r), rel=1e-14)


@pytest.mark.parametrize("family", FAMILIES)
def test_matrix_is_symmetric_psd_with_unit_diagonal(family):
    X = np.random.default_rng(0).random((25, 2))
    K = kernel_matrix(KernelSpec(family, [0.4, 0.9]), X)
    np.testing.assert_allclose(K, K.T)
    np.testing.assert_allclose(np.diag(K), 1.0)
    assert np.linalg.eigvalsh(K).min() > -1e-10


@given(arrays(float, (6, 2), elements=st.floats(-3, 3)),
       arrays(float, 2, elements=st.floats(0.1, 3)))
def test_cross_matrix_agrees_with_pointwise(X, ls):
    k = KernelSpec("matern52", ls)
    Y = X[::-1] + 0.25
    K = kernel_matrix(k, X, Y)
    for i in (0, 3):
        for j in (1, 5):
            assert K[i, j] == pytest.approx(kernel_eval(k, X[i], Y[j]), rel=1e-12, abs=1e-300)


class TestLengthscaleDerivatives:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_gradient_vs_central_difference(self, family):
        rng = np.random.default_rng(1)
        X = rng.random((7, 3))
        ls = np.array([0.3, 0.8, 1.4])
        _, dK = kernel_grad_lengthscale(KernelSpec(family, ls), X)
        for j in range(3):
            h = 1e-6 * ls[j]
            e = np.zeros(3)
            e[j] = h
            fd = (kernel_matrix(KernelSpec(family, ls + e), X) - kernel_matrix(KernelSpec(family, ls - e), X)) / (2 * h)
            np.testing.assert_allclose(dK[j], fd, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_hessian_vs_central_difference(self, family):
        rng = np.random.default_rng(2)
        X = rng.random((6, 2))
        ls = np.array([0.5, 1.1])
        _, _, H = kernel_hess_lengthscale(KernelSpec(family, ls), X)
        for j in range(2):
            h = 1e-6 * ls[j]
            e = np.zeros(2)
            e[j] = h
            fd = (kernel_grad_lengthscale(KernelSpec(family, ls + e), X)[1]
                  - kernel_grad_lengthscale(KernelSpec(family, ls - e), X)[1]) / (2 * h)
            for i in range(2):
                np.testing.assert_allclose(H[i, j], fd[i], rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("family", FAMILIES)
def test_input_gradient(family):
    rng = np.random.default_rng(3)
    k = KernelSpec(family, [0.6, 0.9])
    x, Y = rng.random(2), rng.random((5, 2))
    G = kernel_grad_input(k, x, Y)
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6
        fd = (kernel_matrix(k, (x + e)[None], Y) - kernel_matrix(k, (x - e)[None], Y))[0] / 2e-6
        np.testing.assert_allclose(G[:, j], fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("bad", [[0.0], [-1.0], [np.inf], []])
def test_bad_lengthscales(bad):
    with pytest.raises(ValueError):
        KernelSpec("matern52", bad)


def test_unknown_family_and_dimension():
    with pytest.raises(ValueError, match="unknown kernel"):
        KernelSpec("exponential", [1.0])
    with pytest.raises(ValueError, match="dimension"):
        kernel_matrix(KernelSpec("gaussian", [1.0, 1.0]), np.zeros((3, 3)))
