"""Direct N-dimensional reference computations (no replicate reduction).

Deliberately naive: used to cross-check the reduced forms on small data.
"""
from __future__ import annotations

import numpy as np

from .kernels import kernel_matrix
from .likelihood import NU_G_FLOOR
from .ortho import build_basis, ortho_kernel_matrix

LOG_2PI = np.log(2.0 * np.pi)


def _Kn(params, design, model, points, X=None, Y=None):
    k0 = params.mean_kernel()
    X = design.locations if X is None else X
    if points is None:
        return kernel_matrix(k0, X, Y)
    basis = build_basis(model, params.theta, k0, points=points)
    return ortho_kernel_matrix(basis, X, Y)


def dense_log_lambda(params, design):
    if not params.heteroscedastic:
        return np.zeros(design.n)
    Kg = kernel_matrix(params.noise_kernel(), design.locations)
    Gg = Kg + params.g * np.diag(1.0 / design.a)
    return Kg @ np.linalg.solve(Gg, params.delta)


def dense_parts(params, design, model, points=None):
    U = np.zeros((design.N, design.n))
    U[np.arange(design.N), design.group] = 1.0
    KN = U @ _Kn(params, design, model, points) @ U.T
    LN = np.diag(U @ np.exp(dense_log_lambda(params, design)))
    z = design.y - model.eval(design.X, params.theta)
    return U, KN, LN, z


def dense_log_likelihood(params, design, model, points=None) -> dict:
    """Mean-field and variance-field terms with the N x N matrices formed explicitly."""
    _, KN, LN, z = dense_parts(params, design, model, points)
    C = KN + LN
    N = design.N
    nu = float(z @ np.linalg.solve(C, z)) / N
    _, logdet = np.linalg.slogdet(C)
    mean = -0.5 * N * LOG_2PI - 0.5 * N * np.log(nu) - 0.5 * logdet - 0.5 * N
    var, nu_g = 0.0, None
    if params.heteroscedastic:
        n = design.n
        Kg = kernel_matrix(params.noise_kernel(), design.locations)
        Gg = Kg + params.g * np.diag(1.0 / design.a)
        quad = float(params.delta @ np.linalg.solve(Gg, params.delta))
        logdet = np.linalg.slogdet(Gg)[1]
        nu_g = max(quad / n, NU_G_FLOOR * np.exp(-logdet / n)) if quad > 0 else 0.0
        if nu_g > 0:
            var = -0.5 * n * LOG_2PI - 0.5 * n * np.log(nu_g) - 0.5 * logdet - 0.5 * quad / nu_g
    return {"value": mean + var, "mean_field": mean, "variance_field": var, "nu": nu, "nu_g": nu_g}


def dense_predict(params, design, model, points, Xnew, nu, log_lambda_new):
    """Predictive mean and total variance at ``Xnew`` using N x N solves."""
    U, KN, LN, z = dense_parts(params, design, model, points)
    Xnew = np.atleast_2d(Xnew)
    kx = _Kn(params, design, model, points, Xnew, design.locations) @ U.T
    C = KN + LN
    mu = model.eval(Xnew, params.theta) + kx @ np.linalg.solve(C, z)
    kxx = np.diag(_Kn(params, design, model, points, Xnew))
    r = nu * np.exp(log_lambda_new)
    var = nu * (kxx - np.einsum("ij,ji->i", kx, np.linalg.solve(C, kx.T))) + r
    return mu, var
