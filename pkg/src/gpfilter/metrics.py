"""Precision/recall bookkeeping, AP and optimal F1 for filtered detection streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .simulator import RunRecord, SimulationConfig, derive_seed, simulate_run

DEFAULT_RECALL_GRID = tuple(np.round(np.arange(1, 21) * 0.05, 2))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")


def confusion_from_run(run: RunRecord, kept) -> ConfusionCounts:
    """Counts after filtering; a discarded true positive becomes a miss."""
    kept = np.asarray(kept, dtype=bool)
    if kept.shape != run.truth.shape:
        raise ValueError("need one decision per detection")
    n_tp = int(run.truth.sum())
    tp = int((kept & run.truth).sum())
    fp = int((kept & ~run.truth).sum())
    fn = (run.n_obj - n_tp) + (n_tp - tp)
    return ConfusionCounts(tp, fp, fn)


def precision_recall(c: ConfusionCounts) -> tuple[float, float]:
    # empty denominators follow the PR-curve endpoint conventions
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 1.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    return precision, recall


def f1(precision, recall) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


@dataclass(frozen=True)
class PRSeries:
    """Operating points sorted by strictly increasing recall.

    Build with :meth:`from_points`, which sorts and merges points sharing a
    recall (keeping the best precision).
    """

    recall: np.ndarray
    precision: np.ndarray
    provenance: str = "reference"

    @classmethod
    def from_points(cls, points, provenance="reference") -> "PRSeries":
        pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
        if np.any((pts < 0) | (pts > 1)):
            raise ValueError("recall and precision must lie in [0, 1]")
        best: dict[float, float] = {}
        for r, p in pts:
            best[r] = max(p, best.get(r, -1.0))
        r = np.array(sorted(best))
        return cls(r, np.array([best[v] for v in r]), provenance)

    def __len__(self):
        return self.recall.size

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["recall", "precision"])
            for r, p in self.points():
                w.writerow([repr(r), repr(p)])

    @classmethod
    def from_csv(cls, path, provenance="reference") -> "PRSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_points([(float(r["recall"]), float(r["precision"])) for r in rows],
                               provenance)


def precision_envelope(precision) -> np.ndarray:
    """Running maximum from the right: best precision at any higher recall."""
    return np.maximum.accumulate(np.asarray(precision, dtype=float)[::-1])[::-1]


def average_precision(s: PRSeries) -> float:
    """Trapezoidal area under the monotone envelope, from recall 0 to the last
    observed recall. The curve starts at ``(0, envelope[0])``."""
    if len(s) == 0:
        raise ValueError("empty series")
    env = precision_envelope(s.precision)
    r = s.recall
    if r[0] > 0:
        r = np.concatenate([[0.0], r])
        env = np.concatenate([[env[0]], env])
    return float(np.trapezoid(env, r))


def optimal_f1(s: PRSeries) -> tuple[float, float]:
    """Best F1 over the series and the recall where it occurs (ties: higher recall)."""
    if len(s) == 0:
        raise ValueError("empty series")
    scores = np.array([f1(p, r) for r, p in s.points()])
    i = int(np.flatnonzero(scores == scores.max())[-1])
    return float(scores[i]), float(s.recall[i])


@dataclass
class FilterEvaluation:
    reference: PRSeries
    post: PRSeries
    # one dict per grid recall with raw counts and sync status
    details: list = field(default_factory=list)
    decisions: list = field(default_factory=list)


def post_filter_pr(traj, pr_model, filt, recall_grid=DEFAULT_RECALL_GRID,
                   validation_cfg: SimulationConfig | None = None,
                   provenance="post_filter", keep_decisions=False) -> FilterEvaluation:
    """Reference and post-filter PR series over a grid of detector recalls.

    ``filt`` needs ``sync_phase(X, t)`` returning a filter and ``decide(X, t)``
    returning ``(keep, reasons, t_hat, sigma_hat)``. Each grid point gets its
    own validation run seeded from ``(validation_cfg.seed, index)``.
    """
    cfg = validation_cfg or SimulationConfig(n_periods=10)
    ref_pts, post_pts, details, decisions = [], [], [], []
    for i, recall in enumerate(recall_grid):
        if not 0.0 < recall <= 1.0:
            raise ValueError("grid recalls must lie in (0, 1]")
        run_cfg = SimulationConfig(**{**cfg.__dict__, "seed": derive_seed(cfg.seed, i)})
        run = simulate_run(traj, pr_model, float(recall), run_cfg, saturate_zero_precision=True)
        X, t = run.positions, run.t
        synced = filt.sync_phase(X, t)
        keep, reasons, t_hat, sigma = synced.decide(X, t)
        ref_c = confusion_from_run(run, np.ones(len(run), bool))
        post_c = confusion_from_run(run, keep)
        ref_p, ref_r = precision_recall(ref_c)
        post_p, post_r = precision_recall(post_c)
        ref_pts.append((ref_r, ref_p))
        post_pts.append((post_r, post_p))
        details.append({
            "grid_recall": float(recall),
            "reference": ref_c, "post": post_c,
            "synced": bool(getattr(synced, "synced_", True)),
            "phase_offset": float(getattr(synced, "phase_offset_", 0.0)),
        })
        if keep_decisions:
            decisions.append((float(recall), run, keep, reasons, t_hat, sigma))
    return FilterEvaluation(
        PRSeries.from_points(ref_pts, "reference"),
        PRSeries.from_points(post_pts, provenance),
        details, decisions,
    )
