"""Period estimation, phase alignment and outlier removal for training runs."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .clustering import EPS_FLOOR, ClusterLabeling, DegenerateGeometryError, dbscan, elbow_eps
from .simulator import RunRecord

PERIOD_EPS = 0.5
PERIOD_MIN_SAMPLES = 5
CLEAN_NEIGHBOR_FRACTION = 0.8


class PeriodNotIdentifiable(RuntimeError):
    """Fewer than two trajectory instances could be separated in time."""


@dataclass(frozen=True)
class AlignedDataset:
    """Training points as ``(x, y, phase)`` rows.

    ``source_index`` maps every row back to its detection in the run it was
    built from.
    """

    points: np.ndarray
    period: float
    phase_origin: float
    n_training_periods: int
    source_index: np.ndarray

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")

    def __len__(self):
        return self.points.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def phases(self) -> np.ndarray:
        return self.points[:, 2]

    def subset(self, mask) -> "AlignedDataset":
        return AlignedDataset(self.points[mask], self.period, self.phase_origin,
                              self.n_training_periods, self.source_index[mask])

    def to_csv(self, path, run: RunRecord | None = None) -> None:
        """Write ``t, x, y, truth, phase`` rows; ``t`` and ``truth`` need the source run."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "y", "truth", "phase"])
            for i, (x, y, ph) in zip(self.source_index, self.points):
                t = repr(float(run.t[i])) if run is not None else ""
                truth = ("TP" if run.truth[i] else "FP") if run is not None else ""
                w.writerow([t, repr(float(x)), repr(float(y)), truth, repr(float(ph))])


def _median(values) -> float:
    # numpy's median already averages the two middle order statistics
    return float(np.median(np.asarray(values, dtype=float)))


def period_from_extents(t_min, t_max) -> float:
    """Median spacing of consecutive cluster start and end times."""
    t_min = np.asarray(t_min, dtype=float)
    t_max = np.asarray(t_max, dtype=float)
    if t_min.size < 2:
        raise PeriodNotIdentifiable("need at least two clusters")
    return _median(np.concatenate([np.diff(t_min), np.diff(t_max)]))


def estimate_period(run: RunRecord, eps: float = PERIOD_EPS,
                    min_samples: int = PERIOD_MIN_SAMPLES) -> tuple[float, ClusterLabeling]:
    """Estimate the motion period from the time projection of a run."""
    labeling = dbscan(run.t[:, None], eps, min_samples)
    if labeling.n_clusters < 2:
        raise PeriodNotIdentifiable(
            f"time-axis clustering found {labeling.n_clusters} cluster(s)"
        )
    extents = []
    for c in range(labeling.n_clusters):
        tc = run.t[labeling.labels == c]
        extents.append((tc.min(), tc.max()))
    extents.sort()
    t_min, t_max = np.array(extents).T
    return period_from_extents(t_min, t_max), labeling


def largest_gap_origin(phases, period: float) -> float:
    """Phase origin placing the widest empty arc of the circle on the wrap.

    The origin is the midpoint of that arc, so the phases on either side of
    it land near 0 and near ``period``.
    """
    p = np.sort(np.mod(np.asarray(phases, dtype=float), period))
    if p.size == 0:
        return 0.0
    gaps = np.diff(np.append(p, p[0] + period))
    i = int(np.argmax(gaps))
    return float(np.mod(p[i] + gaps[i] / 2.0, period))


def align(run: RunRecord, period: float, origin: float | None = None,
          n_periods: int | None = None) -> AlignedDataset:
    """Fold a run onto one period.

    ``origin`` defaults to the centre of the largest circular gap of the
    folded timestamps. ``n_periods`` defaults to the number of distinct
    period indices the shifted timestamps fall into.
    """
    if not period > 0:
        raise ValueError("period must be positive")
    if origin is None:
        origin = largest_gap_origin(run.t, period)
    shifted = run.t - origin
    phase = np.mod(shifted, period)
    # mod can round up to exactly `period` for tiny negative inputs
    phase[phase >= period] = 0.0
    if n_periods is None:
        n_periods = int(np.unique(np.floor(shifted / period)).size) if len(run) else 0
    points = np.column_stack([run.x, run.y, phase])
    return AlignedDataset(points, float(period), float(origin), int(n_periods),
                          np.arange(len(run)))


def clean_min_samples(aligned: AlignedDataset,
                      neighbor_fraction: float = CLEAN_NEIGHBOR_FRACTION) -> int:
    return max(1, math.ceil(neighbor_fraction * aligned.n_training_periods - 1e-9))


def clean_eps(aligned: AlignedDataset, neighbor_fraction: float = CLEAN_NEIGHBOR_FRACTION
              ) -> float:
    """Elbow radius used by :func:`auto_clean` for this dataset."""
    try:
        return elbow_eps(aligned.points, clean_min_samples(aligned, neighbor_fraction))
    except DegenerateGeometryError:
        warnings.warn("degenerate k-distance curve, using floor eps", RuntimeWarning)
        return EPS_FLOOR


def auto_clean(aligned: AlignedDataset, neighbor_fraction: float = CLEAN_NEIGHBOR_FRACTION,
               eps: float | None = None) -> AlignedDataset:
    """Drop points that DBSCAN on ``(x, y, phase)`` labels as noise.

    ``min_samples`` is ``ceil(neighbor_fraction * N)`` with N the number of
    observed periods; ``eps`` defaults to the k-distance elbow. Pass the eps
    of an earlier pass to make repeated cleaning a no-op.
    """
    if len(aligned) == 0:
        return aligned
    min_samples = clean_min_samples(aligned, neighbor_fraction)
    if len(aligned) <= min_samples:
        return aligned.subset(np.zeros(len(aligned), bool))
    if eps is None:
        eps = clean_eps(aligned, neighbor_fraction)
    labeling = dbscan(aligned.points, eps, min_samples)
    return aligned.subset(~labeling.noise_mask)


def manual_clean(run: RunRecord) -> RunRecord:
    """Keep only true detections, standing in for a human annotator."""
    return run.subset(run.truth)
