"""Nominal periodic trajectories and analytic precision-recall models.

Positions live in a ``[0, 10] x [0, 10]`` frame. Every trajectory enters
the frame at phase 0, crosses it in ``traversal`` seconds and is absent
for the rest of the period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

FRAME_SIZE = 10.0
PERIOD = 8.0
TRAVERSAL = 5.2

# slack for float round-off on the frame-presence boundary (k * dt vs traversal)
_PHASE_TOL = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


class Truth(str, Enum):
    TRUE_POSITIVE = "TP"
    FALSE_POSITIVE = "FP"


@dataclass(frozen=True)
class Detection:
    """One predicted box center. ``truth`` is simulation metadata only."""

    pos: Point2
    t: float
    truth: Truth


def _line(u):
    return 10.0 * u, 2.0 + 6.0 * u


def _arc(u):
    return 10.0 * u, 1.0 + 8.0 * (1.0 - (2.0 * u - 1.0) ** 2)


def _wave(u):
    return 10.0 * u, 5.0 + 2.0 * np.sin(4.0 * np.pi * u)


@dataclass(frozen=True)
class NominalTrajectory:
    id: str
    shape: Callable = field(repr=False, compare=False)
    period: float = PERIOD
    traversal: float = TRAVERSAL

    def __post_init__(self):
        if not 0.0 < self.traversal < self.period:
            raise ValueError("need 0 < traversal < period")

    def phase(self, t):
        return np.mod(t, self.period)

    def positions(self, t):
        """Vectorized positions.

        Returns ``(xy, present)`` where ``xy`` has shape ``(n, 2)`` and is NaN
        wherever the object is out of frame.
        """
        t = np.asarray(t, dtype=float)
        phase = self.phase(t)
        present = phase <= self.traversal + _PHASE_TOL
        u = np.clip(phase / self.traversal, 0.0, 1.0)
        x, y = self.shape(u)
        xy = np.column_stack([np.broadcast_to(x, u.shape), np.broadcast_to(y, u.shape)])
        xy[~present] = np.nan
        return xy, present


def nominal_position(traj: NominalTrajectory, t: float) -> Point2 | None:
    """Object center at time ``t``, or None when the object is off-frame."""
    if t < 0:
        raise ValueError("t must be non-negative")
    phase = math.fmod(t, traj.period)
    if phase > traj.traversal + _PHASE_TOL:
        return None
    u = min(phase / traj.traversal, 1.0)
    x, y = traj.shape(u)
    return Point2(float(x), float(y))


TRAJECTORIES = {
    "gamma1": NominalTrajectory("gamma1", _line),
    "gamma2": NominalTrajectory("gamma2", _arc),
    "gamma3": NominalTrajectory("gamma3", _wave),
}


def get_trajectory(name: str) -> NominalTrajectory:
    try:
        return TRAJECTORIES[name.lower()]
    except KeyError:
        raise ValueError(
            f"unknown trajectory {name!r}; expected one of {sorted(TRAJECTORIES)}"
        ) from None


@dataclass(frozen=True)
class PRCurveModel:
    """Precision-recall family ``precision(r) = 1 - r**beta``.

    Its area under the curve is ``beta / (beta + 1)``, which makes exact
    calibration to a target AP a one-liner (see :meth:`from_ap`).
    """

    beta: float
    label: str = ""

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def precision(self, recall):
        return 1.0 - np.power(recall, self.beta)

    @property
    def average_precision(self) -> float:
        return self.beta / (self.beta + 1.0)

    @classmethod
    def from_ap(cls, ap: float, label: str = "") -> "PRCurveModel":
        if not 0.0 < ap < 1.0:
            raise ValueError(f"target AP must lie in (0, 1), got {ap}")
        return cls(beta=ap / (1.0 - ap), label=label)
