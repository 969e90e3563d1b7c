"""Exact DBSCAN and k-distance elbow selection of its radius."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

NOISE = -1
EPS_FLOOR = 1e-6


class DegenerateGeometryError(ValueError):
    """The k-distance curve is identically zero, so it has no knee."""


@dataclass(frozen=True)
class ClusterLabeling:
    labels: np.ndarray
    n_clusters: int
    core_mask: np.ndarray

    @property
    def noise_mask(self) -> np.ndarray:
        return self.labels == NOISE


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def dbscan(points, eps: float, min_samples: int) -> ClusterLabeling:
    """Label points with DBSCAN using exact Euclidean distances.

    A point is core when at least ``min_samples`` points (itself included)
    lie within ``eps``. Clusters are seeded from core points in ascending
    index order and expanded breadth-first, so a border point reachable
    from several clusters joins the one discovered first.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    pts = _as_points(points)
    n = pts.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return ClusterLabeling(labels, 0, np.zeros(0, bool))

    adjacency = cdist(pts, pts) <= eps
    neighbors = [np.flatnonzero(row) for row in adjacency]
    core = adjacency.sum(axis=1) >= min_samples

    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in neighbors[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    return ClusterLabeling(labels, cluster, core)


class DBSCAN(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`dbscan`."""

    def __init__(self, eps=0.5, min_samples=5):
        self.eps = eps
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=0)
        result = dbscan(X, self.eps, self.min_samples)
        self.labels_ = result.labels
        self.n_clusters_ = result.n_clusters
        self.core_sample_indices_ = np.flatnonzero(result.core_mask)
        return self


def k_distances(points, k: int) -> np.ndarray:
    """Distance from every point to its k-th nearest other point."""
    pts = _as_points(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if pts.shape[0] <= k:
        raise ValueError(f"need more than k={k} points, got {pts.shape[0]}")
    d = cdist(pts, pts)
    # column 0 of each sorted row is the point itself
    return np.sort(d, axis=1)[:, k]


def knee_index(curve) -> int:
    """Index of maximum distance between a curve and its end-to-end chord.

    Perpendicular and vertical distances to the chord differ by a constant
    factor, so the vertical one is used.
    """
    y = np.asarray(curve, dtype=float)
    if y.size < 3:
        return 0
    x = np.arange(y.size, dtype=float)
    chord = y[0] + (y[-1] - y[0]) * x / x[-1]
    return int(np.argmax(np.abs(y - chord)))


def elbow_eps(points, k: int) -> float:
    """DBSCAN radius at the knee of the descending k-distance curve.

    Raises :class:`DegenerateGeometryError` if all k-distances are zero.
    Tiny positive values are floored to ``EPS_FLOOR`` with a warning.
    """
    curve = np.sort(k_distances(points, k))[::-1]
    if not np.any(curve > 0):
        raise DegenerateGeometryError("all k-distances are zero")
    eps = float(curve[knee_index(curve)])
    if eps < EPS_FLOOR:
        warnings.warn(f"elbow eps {eps:g} below floor, using {EPS_FLOOR:g}", RuntimeWarning)
        eps = EPS_FLOOR
    return eps
