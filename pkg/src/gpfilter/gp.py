"""Exact Gaussian process regression from box centers ``(x, y)`` to phase.

The kernel is an isotropic squared exponential on standardized inputs.
Hyperparameters are chosen by maximizing the log marginal likelihood: a
log-spaced grid search followed by bounded L-BFGS-B refinement using the
analytic gradient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

_LOG_2PI = math.log(2.0 * math.pi)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

# search grid, relative to standardized inputs and the target spread
LENGTH_SCALE_GRID = np.geomspace(0.05, 5.0, 7)
SIGNAL_STD_GRID = np.geomspace(0.3, 10.0, 4)
NOISE_STD_GRID = np.geomspace(1e-3, 0.3, 5)


class NotPositiveDefinite(LinAlgError):
    pass


class DegenerateData(ValueError):
    pass


@dataclass(frozen=True)
class GPHyperparams:
    """Kernel hyperparameters. ``length_scale`` is in standardized input units."""

    length_scale: float
    signal_std: float
    noise_std: float

    def __post_init__(self):
        if min(self.length_scale, self.signal_std, self.noise_std) <= 0:
            raise ValueError("hyperparameters must be strictly positive")

    @property
    def log(self) -> np.ndarray:
        return np.log([self.length_scale, self.signal_std, self.noise_std])

    @classmethod
    def from_log(cls, theta) -> "GPHyperparams":
        ls, sf, sn = np.exp(np.asarray(theta, dtype=float))
        return cls(float(ls), float(sf), float(sn))


def se_kernel(A, B, length_scale, signal_std):
    sq = cdist(A, B, "sqeuclidean")
    return signal_std**2 * np.exp(-0.5 * sq / length_scale**2)


def stable_cholesky(K):
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    for jitter in JITTER_LADDER:
        try:
            if jitter:
                K = K + jitter * np.eye(K.shape[0])
            return cholesky(K, lower=True, check_finite=False), jitter
        except LinAlgError:
            continue
    raise NotPositiveDefinite("covariance not positive definite even with 1e-6 jitter")


def log_marginal_likelihood(X, y, hyper: GPHyperparams, return_grad=False):
    """Log evidence of targets ``y`` at inputs ``X`` under a zero-mean GP.

    With ``return_grad`` also returns the gradient with respect to the log
    of (length_scale, signal_std, noise_std).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n = y.size
    sq = cdist(X, X, "sqeuclidean")
    Kf = hyper.signal_std**2 * np.exp(-0.5 * sq / hyper.length_scale**2)
    K = Kf + hyper.noise_std**2 * np.eye(n)
    L, _ = stable_cholesky(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * _LOG_2PI
    if not return_grad:
        return float(lml)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    dK_ls = Kf * sq / hyper.length_scale**2
    grad = np.array([
        0.5 * np.sum(W * dK_ls),
        np.sum(W * Kf),
        hyper.noise_std**2 * np.trace(W),
    ])
    return float(lml), grad


class GaussianProcessRegressor(RegressorMixin, BaseEstimator):
    """Exact GP regressor returning predictive mean and standard deviation.

    Parameters
    ----------
    length_scale, signal_std, noise_std : float, optional
        Starting (or, with ``optimize=False``, fixed) hyperparameters.
        ``signal_std`` and ``noise_std`` are in target units; missing values
        fall back to data-driven defaults.
    optimize : bool
        Run the grid search and gradient refinement of the evidence.

    Attributes
    ----------
    hyper_ : GPHyperparams
    L_ : ndarray
        Lower Cholesky factor of ``K + noise_std**2 I`` (plus any jitter).
    alpha_ : ndarray
        ``(K + noise_std**2 I)^-1 (y - y_mean_)``.
    """

    def __init__(self, length_scale=None, signal_std=None, noise_std=None, optimize=True):
        self.length_scale = length_scale
        self.signal_std = signal_std
        self.noise_std = noise_std
        self.optimize = optimize

    def _standardize(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def _default_hyper(self, Xs, yc) -> GPHyperparams:
        y_std = float(np.std(yc)) or 1.0
        ls = self.length_scale or 0.2 * float(np.linalg.norm(np.std(Xs, axis=0))) or 1.0
        sf = self.signal_std or y_std
        sn = self.noise_std or 0.1 * y_std
        return GPHyperparams(ls, sf, sn)

    def _search(self, Xs, yc, start: GPHyperparams) -> GPHyperparams:
        y_std = float(np.std(yc)) or 1.0
        best_theta, best = start.log, -np.inf
        try:
            best = log_marginal_likelihood(Xs, yc, start)
        except NotPositiveDefinite:
            pass
        for ls in LENGTH_SCALE_GRID:
            for sf in SIGNAL_STD_GRID * y_std:
                for sn in NOISE_STD_GRID * y_std:
                    h = GPHyperparams(ls, sf, sn)
                    try:
                        v = log_marginal_likelihood(Xs, yc, h)
                    except NotPositiveDefinite:
                        continue
                    if v > best:
                        best, best_theta = v, h.log
        log_ys = math.log(y_std)
        bounds = [(math.log(1e-3), math.log(1e3)),
                  (log_ys + math.log(1e-4), log_ys + math.log(1e3)),
                  (log_ys + math.log(1e-6), log_ys + math.log(1e2))]

        def objective(theta):
            try:
                v, g = log_marginal_likelihood(Xs, yc, GPHyperparams.from_log(theta), True)
            except NotPositiveDefinite:
                return 1e25, np.zeros(3)
            return -v, -g

        res = minimize(objective, best_theta, jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and -res.fun > best:
            best_theta = res.x
        return GPHyperparams.from_log(best_theta)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_samples=1)
        if X.shape[0] > 1 and np.all(np.ptp(X, axis=0) == 0):
            raise DegenerateData("all training inputs coincide")
        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        self.x_scale_ = scale
        self.y_mean_ = float(y.mean())
        Xs = self._standardize(X)
        yc = y - self.y_mean_

        hyper = self._default_hyper(Xs, yc)
        if self.optimize and X.shape[0] > 1:
            hyper = self._search(Xs, yc, hyper)
        self.hyper_ = hyper
        self._factorize(Xs, yc)
        return self

    def _factorize(self, Xs, yc):
        h = self.hyper_
        K = se_kernel(Xs, Xs, h.length_scale, h.signal_std)
        K[np.diag_indices_from(K)] += h.noise_std**2
        self.L_, self.jitter_ = stable_cholesky(K)
        self.alpha_ = cho_solve((self.L_, True), yc, check_finite=False)
        self.X_train_ = Xs
        self.y_train_ = yc
        self.n_features_in_ = Xs.shape[1]

    def predict(self, X, return_std=False):
        check_is_fitted(self, "alpha_")
        X = check_array(X, ensure_min_samples=0)
        h = self.hyper_
        if X.shape[0] == 0:
            empty = np.zeros(0)
            return (empty, empty) if return_std else empty
        Ks = se_kernel(self._standardize(X), self.X_train_, h.length_scale, h.signal_std)
        mean = Ks @ self.alpha_ + self.y_mean_
        if not return_std:
            return mean
        v = solve_triangular(self.L_, Ks.T, lower=True, check_finite=False)
        latent = np.maximum(h.signal_std**2 - np.einsum("ij,ij->j", v, v), 0.0)
        return mean, np.sqrt(latent + h.noise_std**2)

    def log_marginal_likelihood(self, hyper: GPHyperparams | None = None) -> float:
        check_is_fitted(self, "alpha_")
        return log_marginal_likelihood(self.X_train_, self.y_train_, hyper or self.hyper_)

    @property
    def prior_std(self) -> float:
        return math.hypot(self.hyper_.signal_std, self.hyper_.noise_std)

    def to_dict(self) -> dict:
        check_is_fitted(self, "alpha_")
        return {
            "kernel": "squared_exponential",
            "hyperparameters": asdict(self.hyper_),
            "x_mean": self.x_mean_.tolist(),
            "x_scale": self.x_scale_.tolist(),
            "y_mean": self.y_mean_,
            "train_inputs": self.X_train_.tolist(),
            "train_targets": self.y_train_.tolist(),
            "alpha": self.alpha_.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianProcessRegressor":
        h = GPHyperparams(**data["hyperparameters"])
        gp = cls(h.length_scale, h.signal_std, h.noise_std, optimize=False)
        gp.x_mean_ = np.asarray(data["x_mean"], dtype=float)
        gp.x_scale_ = np.asarray(data["x_scale"], dtype=float)
        gp.y_mean_ = float(data["y_mean"])
        gp.hyper_ = h
        gp._factorize(np.asarray(data["train_inputs"], dtype=float),
                      np.asarray(data["train_targets"], dtype=float))
        return gp
