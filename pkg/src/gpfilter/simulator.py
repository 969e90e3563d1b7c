"""Frame-by-frame simulation of an imperfect detector on a periodic scene."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .trajectory import (
    FRAME_SIZE,
    Detection,
    NominalTrajectory,
    Point2,
    PRCurveModel,
    Truth,
    get_trajectory,
)

RUN_CSV_COLUMNS = ("t", "x", "y", "truth")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary hashable parts (order matters)."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 0.1
    pos_noise_sigma: float = 0.1
    time_noise_sigma: float = 5e-3
    n_periods: int = 5
    seed: int = 0
    # shifts the scene clock: frame k shows the object at k * dt + start_offset
    start_offset: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.pos_noise_sigma < 0 or self.time_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass
class RunRecord:
    """Detections of one simulated run, stored column-wise.

    ``truth`` is True for true positives. ``frame`` holds the index of the
    frame that produced each detection; rows are sorted by it.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    truth: np.ndarray
    frame: np.ndarray
    n_frames: int
    n_obj: int
    trajectory: str = ""
    config: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.truth = np.asarray(self.truth, dtype=bool)
        self.frame = np.asarray(self.frame, dtype=np.int64)

    def __len__(self):
        return self.t.size

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def detections(self) -> list[Detection]:
        return [
            Detection(Point2(float(x), float(y)), float(t),
                      Truth.TRUE_POSITIVE if tp else Truth.FALSE_POSITIVE)
            for t, x, y, tp in zip(self.t, self.x, self.y, self.truth)
        ]

    def subset(self, mask) -> "RunRecord":
        mask = np.asarray(mask)
        return replace(
            self, t=self.t[mask], x=self.x[mask], y=self.y[mask],
            truth=self.truth[mask], frame=self.frame[mask],
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RUN_CSV_COLUMNS)
            for t, x, y, tp in zip(self.t, self.x, self.y, self.truth):
                writer.writerow([repr(float(t)), repr(float(x)), repr(float(y)),
                                 "TP" if tp else "FP"])

    def to_dict(self) -> dict:
        return {
            "trajectory": self.trajectory,
            "n_frames": self.n_frames,
            "n_obj": self.n_obj,
            "config": asdict(self.config),
            "detections": [
                {"t": float(t), "x": float(x), "y": float(y),
                 "truth": "TP" if tp else "FP", "frame": int(k)}
                for t, x, y, tp, k in zip(self.t, self.x, self.y, self.truth, self.frame)
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        dets = data["detections"]
        return cls(
            t=[d["t"] for d in dets],
            x=[d["x"] for d in dets],
            y=[d["y"] for d in dets],
            truth=[d["truth"] == "TP" for d in dets],
            frame=[d["frame"] for d in dets],
            n_frames=data["n_frames"],
            n_obj=data["n_obj"],
            trajectory=data.get("trajectory", ""),
            config=SimulationConfig(**data.get("config", {})),
        )

    @classmethod
    def from_json(cls, path) -> "RunRecord":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_csv(cls, path, n_frames=None, n_obj=None, dt=0.1) -> "RunRecord":
        """Load the CSV form. Frame indices and counts are reconstructed
        from the timestamps when not given, since the CSV does not store them."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["t"]) for r in rows])
        frame = np.rint(t / dt).astype(np.int64)
        if n_frames is None:
            n_frames = int(frame.max()) + 1 if frame.size else 0
        if n_obj is None:
            tp_frames = {k for k, r in zip(frame, rows) if r.get("truth", "TP") == "TP"}
            n_obj = len(tp_frames)
        return cls(
            t=t,
            x=[float(r["x"]) for r in rows],
            y=[float(r["y"]) for r in rows],
            truth=[r.get("truth", "TP") == "TP" for r in rows],
            frame=frame,
            n_frames=n_frames,
            n_obj=n_obj,
            config=SimulationConfig(dt=dt),
        )


def failure_probabilities(recall, precision, n_frames, n_obj):
    """Per-frame miss and false-alarm probabilities for an operating point.

    ``p_fp`` is the expected number of false positives per frame and is
    not clamped here; the simulator clamps it to 1.
    """
    if precision <= 0:
        raise ZeroDivisionError("precision must be > 0 to derive a false-positive rate")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    p_fn = 1.0 - recall
    p_fp = (n_obj * (1.0 - p_fn) / n_frames) * ((1.0 - precision) / precision)
    return p_fn, p_fp


def simulate_run(
    traj: NominalTrajectory,
    pr: PRCurveModel,
    recall: float,
    cfg: SimulationConfig,
    saturate_zero_precision: bool = False,
) -> RunRecord:
    """Simulate ``cfg.n_periods`` periods of detections at one recall.

    With ``saturate_zero_precision`` an operating point whose precision is
    exactly 0 is simulated at the saturated false-positive rate (one per
    frame) instead of raising.
    """
    if not 0.0 <= recall <= 1.0:
        raise ValueError("recall must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)

    n_frames = int(round(cfg.n_periods * traj.period / cfg.dt))
    frames = np.arange(n_frames)
    nominal_t = frames * cfg.dt
    xy, present = traj.positions(nominal_t + cfg.start_offset)
    n_obj = int(present.sum())

    precision = float(pr.precision(recall))
    if recall == 0.0:
        p_fn, p_fp = 1.0, 0.0
    elif precision <= 0.0 and saturate_zero_precision:
        p_fn, p_fp = 1.0 - recall, 1.0
    else:
        p_fn, p_fp = failure_probabilities(recall, precision, n_frames, n_obj)
    p_fp = min(max(p_fp, 0.0), 1.0)

    # fixed draw order keeps runs bit-identical for a given seed
    tp_draw = rng.random(n_frames)
    fp_draw = rng.random(n_frames)
    tp_pos_noise = rng.normal(0.0, 1.0, size=(n_frames, 2)) * cfg.pos_noise_sigma
    tp_t_noise = rng.normal(0.0, 1.0, size=n_frames) * cfg.time_noise_sigma
    fp_pos = rng.uniform(0.0, FRAME_SIZE, size=(n_frames, 2))
    fp_t_noise = rng.normal(0.0, 1.0, size=n_frames) * cfg.time_noise_sigma

    tp = present & (tp_draw < 1.0 - p_fn)
    fp = fp_draw < p_fp

    tp_xy = xy[tp] + tp_pos_noise[tp]
    tp_t = nominal_t[tp] + tp_t_noise[tp]
    fp_xy = fp_pos[fp]
    fp_t = nominal_t[fp] + fp_t_noise[fp]

    frame = np.concatenate([frames[tp], frames[fp]])
    truth = np.concatenate([np.ones(tp.sum(), bool), np.zeros(fp.sum(), bool)])
    # stable sort: within a frame the true detection comes first
    order = np.argsort(frame, kind="stable")
    t = np.maximum(np.concatenate([tp_t, fp_t])[order], 0.0)
    pos = np.concatenate([tp_xy, fp_xy])[order]

    return RunRecord(
        t=t, x=pos[:, 0], y=pos[:, 1], truth=truth[order], frame=frame[order],
        n_frames=n_frames, n_obj=n_obj, trajectory=traj.id, config=cfg,
    )


def load_run(path) -> RunRecord:
    path = str(path)
    if path.endswith(".json"):
        return RunRecord.from_json(path)
    return RunRecord.from_csv(path)


__all__ = [
    "SimulationConfig",
    "RunRecord",
    "failure_probabilities",
    "simulate_run",
    "derive_seed",
    "load_run",
    "get_trajectory",
]
