"""Pointwise predictive distributions and the evaluation metrics.

For a new input ``x`` with cross-covariance ``k_n(x)`` to the unique design
locations::

    mean(x)  = f(x, theta) + k_n(x)^T Gamma_n^{-1} rbar
    var(x)   = nu (k(x, x) - k_n(x)^T Gamma_n^{-1} k_n(x)) + r(x)
    r(x)     = nu exp(log_lambda(x))
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .kernels import kernel_matrix
from .noise import predict_log_lambda
from .ortho import ortho_kernel_matrix

Z975 = 1.959963984540054


@dataclass(frozen=True)
class PredictiveDistribution:
    x: np.ndarray  # (p, d)
    mean: np.ndarray
    total_variance: np.ndarray
    noise_variance: np.ndarray
    model_value: np.ndarray

    @property
    def discrepancy_mean(self) -> np.ndarray:
        return self.mean - self.model_value

    @property
    def discrepancy_variance(self) -> np.ndarray:
        return np.maximum(self.total_variance - self.noise_variance, 0.0)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.total_variance)

    def interval(self, level: float = 0.95):
        if level != 0.95:
            from .stats import normal_quantile
            z = normal_quantile(0.5 + 0.5 * level)
        else:
            z = Z975
        h = z * self.sd
        return self.mean - h, self.mean + h

    def __len__(self):
        return self.mean.size

    def to_csv(self, path) -> None:
        """Write to a path, or to an open text stream."""
        if hasattr(path, "write"):
            self._write(path)
            return
        with open(path, "w", newline="") as fh:
            self._write(fh)

    def _write(self, fh) -> None:
        lo, hi = self.interval()
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(self.x.shape[1])]
                   + ["mean", "sd_total", "sd_noise", "model", "discrepancy", "lo95", "hi95"])
        cols = [self.mean, self.sd, np.sqrt(self.noise_variance), self.model_value,
                self.discrepancy_mean, lo, hi]
        for i in range(self.mean.size):
            w.writerow([repr(float(v)) for v in self.x[i]] + [repr(float(c[i])) for c in cols])


def _cross_and_diag(params, state, design, Xnew):
    k0 = params.mean_kernel()
    if state.basis is None:
        kx = kernel_matrix(k0, Xnew, design.locations)
        kxx = np.ones(Xnew.shape[0])
    else:
        b = state.basis
        kx = ortho_kernel_matrix(b, Xnew, design.locations)
        CX = b.F.T @ kernel_matrix(k0, b.xi, Xnew)
        kxx = 1.0 - np.sum(CX * b.solve(CX), axis=0)
    return kx, kxx


def predict(fit, Xnew) -> PredictiveDistribution:
    """Predictive distribution of a new observation at each row of ``Xnew``."""
    params, state, design, model = fit.params, fit.state, fit.design, fit.model
    Xnew = np.asarray(Xnew, dtype=float)
    Xnew = Xnew.reshape(-1, design.d) if Xnew.ndim < 2 else Xnew
    if Xnew.shape[1] != design.d:
        raise ValueError(f"new inputs have dimension {Xnew.shape[1]}, the design has {design.d}")
    kx, kxx = _cross_and_diag(params, state, design, Xnew)
    fx = model.eval(Xnew, params.theta)
    mean = fx + kx @ state.alpha
    quad = np.sum(kx.T * cho_solve(state.Gamma_cho, kx.T), axis=0)
    nu = state.nu_hat
    if state.noise is not None:
        ell = np.atleast_1d(predict_log_lambda(state.noise, Xnew))
    else:
        ell = np.zeros(Xnew.shape[0])
    noise = nu * np.exp(ell)
    # the Schur complement is nonnegative in exact arithmetic; clip roundoff
    latent = nu * np.maximum(kxx - quad, 0.0)
    return PredictiveDistribution(Xnew, mean, latent + noise, noise, fx)


def rmse(pred, truth) -> float:
    mean = pred.mean if isinstance(pred, PredictiveDistribution) else np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if mean.shape != truth.shape:
        raise ValueError(f"length mismatch: {mean.shape} predictions, {truth.shape} truth values")
    return float(np.sqrt(np.mean((truth - mean) ** 2)))


def predictive_score(pred, truth, r, variance=None, literal: bool = False) -> float:
    """Average proper score of a Gaussian forecast against ``N(truth, r)``.

    Per point ``-(truth - mean)^2 / s2 - r / s2 - log s2``, higher is better.
    ``literal=True`` divides the squared error by ``s2`` twice instead.
    """
    if isinstance(pred, PredictiveDistribution):
        mean, s2 = pred.mean, pred.total_variance
    else:
        mean, s2 = np.asarray(pred, dtype=float), np.asarray(variance, dtype=float)
    truth = np.asarray(truth, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), truth.shape)
    if mean.shape != truth.shape or s2.shape != truth.shape:
        raise ValueError("length mismatch between predictions and truth")
    if np.any(s2 <= 0):
        raise ValueError("predictive variance must be positive")
    err = (truth - mean) ** 2
    first = err / s2 ** 2 if literal else err / s2
    return float(np.mean(-first - r / s2 - np.log(s2)))
