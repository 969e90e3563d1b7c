"""Online box filter built from a trained trajectory GP.

A detection at ``(x, y)`` and run time ``t`` is kept when the GP is
confident about that location (``sigma_hat < sigma_max``) and the GP's
predicted phase agrees with the cyclic run time to within ``sigma_max``.
"""

from __future__ import annotations

import json
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .gp import GaussianProcessRegressor
from .preprocess import AlignedDataset

SYNC_PREFIX_SIZE = 20


class Reason(str, Enum):
    KEEP = "keep"
    UNCERTAINTY = "uncertainty_too_high"
    TIME = "time_mismatch"


def circular_distance(a, b, period):
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), period))
    return np.minimum(d, period - d)


def circular_median(values, period) -> float:
    """The input value minimizing the summed circular distance to all others.

    Ties go to the smallest such value after folding into ``[0, period)``.
    """
    v = np.sort(np.mod(np.asarray(values, dtype=float), period))
    cost = circular_distance(v[:, None], v[None, :], period).sum(axis=1)
    return float(v[int(np.argmin(cost))])


def sync_prefix(t, period, size=SYNC_PREFIX_SIZE) -> np.ndarray:
    """Indices of the first ``size`` detections or one period of wall time,
    whichever is shorter."""
    t = np.asarray(t, dtype=float)
    if t.size == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.flatnonzero(t < t[0] + period) if period else np.arange(t.size)
    return idx[:size]


class PeriodicTrajectoryFilter(BaseEstimator):
    """Discard detections inconsistent with a learned periodic trajectory.

    Parameters
    ----------
    regressor : GaussianProcessRegressor, optional
        Template cloned and fitted on the aligned training points.
    sync_size : int
        Maximum number of leading detections used by :meth:`sync_phase`.

    Attributes
    ----------
    gp_ : fitted GaussianProcessRegressor
    period_ : float or None
        Estimated period. ``None`` disables the time test.
    phase_origin_ : float
        Offset between training phases and the cyclic clock of the
        training run; predicted phases are mapped back through it.
    sigma_max_ : float
        Largest predictive std over the training inputs.
    phase_offset_ : float
        Run-time shift found by :meth:`sync_phase`, in ``[0, period_)``.
    synced_ : bool
    """

    def __init__(self, regressor=None, sync_size=SYNC_PREFIX_SIZE):
        self.regressor = regressor
        self.sync_size = sync_size

    def fit(self, X, y=None, *, period=None, phase_origin=0.0):
        """Fit from an :class:`AlignedDataset` or from positions and phases."""
        if isinstance(X, AlignedDataset):
            X, y, period, phase_origin = X.positions, X.phases, X.period, X.phase_origin
        X = check_array(X)
        gp = clone(self.regressor) if self.regressor is not None else GaussianProcessRegressor()
        gp.fit(X, y)
        return self._build(gp, X, period, phase_origin)

    @classmethod
    def from_gp(cls, gp, training_inputs, period, phase_origin=0.0, **params):
        """Wrap an already fitted GP; ``sigma_max`` is taken over ``training_inputs``."""
        return cls(**params)._build(gp, training_inputs, period, phase_origin)

    def _build(self, gp, training_inputs, period, phase_origin):
        X = np.asarray(training_inputs, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        if period is not None and not period > 0:
            raise ValueError("period must be positive")
        self.gp_ = gp
        self.period_ = None if period is None else float(period)
        self.phase_origin_ = float(phase_origin)
        _, std = gp.predict(X, return_std=True)
        self.sigma_max_ = float(std.max())
        self.phase_offset_ = 0.0
        self.synced_ = False
        return self

    def predict_phase(self, X):
        """Predicted cyclic time and predictive std for positions ``X``."""
        check_is_fitted(self, "gp_")
        mean, std = self.gp_.predict(np.asarray(X, dtype=float).reshape(-1, 2), return_std=True)
        if self.period_ is not None:
            mean = np.mod(mean + self.phase_origin_, self.period_)
        return mean, std

    def sync_phase(self, X, t):
        """Return a copy whose ``phase_offset_`` aligns run time with the model.

        Uses detections in the leading prefix that pass the uncertainty test.
        If none do, the copy keeps the current offset and ``synced_`` is False.
        """
        check_is_fitted(self, "gp_")
        synced = clone(self)
        synced.__dict__.update({k: v for k, v in self.__dict__.items() if k.endswith("_")})
        synced.synced_ = False
        t = np.asarray(t, dtype=float)
        if self.period_ is None or t.size == 0:
            return synced
        idx = sync_prefix(t, self.period_, self.sync_size)
        t_hat, sigma = self.predict_phase(np.asarray(X, dtype=float).reshape(-1, 2)[idx])
        ok = sigma < self.sigma_max_
        if not ok.any():
            return synced
        residual = np.mod(t[idx][ok] - t_hat[ok], self.period_)
        synced.phase_offset_ = circular_median(residual, self.period_)
        synced.synced_ = True
        return synced

    def decide(self, X, t):
        """Per-detection decision.

        Returns ``(keep, reasons, t_hat, sigma_hat)``. When both tests fail
        the uncertainty test is reported.
        """
        t = np.asarray(t, dtype=float)
        t_hat, sigma = self.predict_phase(X)
        confident = sigma < self.sigma_max_
        if self.period_ is None:
            on_time = np.ones_like(confident)
        else:
            t_cyc = np.mod(t - self.phase_offset_, self.period_)
            on_time = circular_distance(t_hat, t_cyc, self.period_) < self.sigma_max_
        reasons = np.where(~confident, Reason.UNCERTAINTY.value,
                           np.where(~on_time, Reason.TIME.value, Reason.KEEP.value))
        return confident & on_time, reasons, t_hat, sigma

    def predict(self, X, t):
        """Boolean keep mask."""
        return self.decide(X, t)[0]

    def to_dict(self) -> dict:
        check_is_fitted(self, "gp_")
        return {
            "period": self.period_,
            "phase_origin": self.phase_origin_,
            "sigma_max": self.sigma_max_,
            "phase_offset": self.phase_offset_,
            "gp": self.gp_.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicTrajectoryFilter":
        f = cls()
        f.gp_ = GaussianProcessRegressor.from_dict(data["gp"])
        f.period_ = data["period"]
        f.phase_origin_ = data["phase_origin"]
        f.sigma_max_ = data["sigma_max"]
        f.phase_offset_ = data.get("phase_offset", 0.0)
        f.synced_ = False
        return f

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "PeriodicTrajectoryFilter":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
