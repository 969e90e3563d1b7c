"""End-to-end experiment matrix: PR models x trajectories x cleaning modes."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import jsonschema
import numpy as np
from joblib import Parallel, delayed

from .filter import PeriodicTrajectoryFilter
from .gp import GaussianProcessRegressor
from .metrics import (
    DEFAULT_RECALL_GRID,
    FilterEvaluation,
    PRSeries,
    average_precision,
    optimal_f1,
    post_filter_pr,
)
from .preprocess import (
    AlignedDataset,
    PeriodNotIdentifiable,
    align,
    auto_clean,
    estimate_period,
    manual_clean,
)
from .simulator import SimulationConfig, derive_seed, simulate_run
from .trajectory import PRCurveModel, get_trajectory

log = logging.getLogger(__name__)

AP_TARGETS = (0.811, 0.883, 0.942, 0.975)
MODES = ("auto", "manual")

STATUS_OK = "ok"
STATUS_NO_PERIOD = "period_not_identifiable"
STATUS_FALLBACK = "fallback"
STATUS_FAILED = "failed"


class ConfigError(ValueError):
    pass


def load_schema(name: str) -> dict:
    return json.loads(resources.files("gpfilter.schemas").joinpath(name).read_text())


def calibrate_pr_models(ap_targets=AP_TARGETS) -> list[PRCurveModel]:
    """One ``1 - r**beta`` model per target AP, labelled PR1.. by ascending AP."""
    targets = sorted(float(a) for a in ap_targets)
    return [PRCurveModel.from_ap(ap, f"PR{i + 1}") for i, ap in enumerate(targets)]


def analytic_optimal_f1(pr: PRCurveModel, n=100001) -> float:
    r = np.linspace(0.0, 1.0, n)
    p = pr.precision(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return float(score.max())


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    n_train_periods: int = 5
    train_recall: float = 0.9
    n_validation_periods: int = 10
    recall_grid: list = field(default_factory=lambda: list(DEFAULT_RECALL_GRID))
    trajectories: list = field(default_factory=lambda: ["gamma1", "gamma2", "gamma3"])
    ap_targets: list = field(default_factory=lambda: list(AP_TARGETS))
    cleaning_modes: list = field(default_factory=lambda: list(MODES))
    output_dir: str = "results"
    failure_policy: str = "record"
    gp_search: bool = True
    dt: float = 0.1
    pos_noise_sigma: float = 0.1
    time_noise_sigma: float = 5e-3
    n_jobs: int = 1
    write_decisions: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, load_schema("config.schema.json"))
        except jsonschema.ValidationError as exc:
            raise ConfigError(exc.message) from None
        cfg = cls(**data)
        for name in cfg.trajectories:
            try:
                get_trajectory(name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def sim_config(self, n_periods, seed) -> SimulationConfig:
        return SimulationConfig(dt=self.dt, pos_noise_sigma=self.pos_noise_sigma,
                                time_noise_sigma=self.time_noise_sigma,
                                n_periods=n_periods, seed=seed)


# report columns, in csv order
CELL_FIELDS = (
    "pr_label", "trajectory", "cleaning_mode", "status", "degraded",
    "reference_ap", "reference_of1", "post_ap", "post_of1",
    "period_hat", "sigma_max", "sync_rate", "n_train", "n_clean", "seed",
)


@dataclass
class CellResult:
    pr_label: str
    trajectory: str
    cleaning_mode: str
    status: str
    degraded: bool
    reference_ap: float
    reference_of1: float
    post_ap: float
    post_of1: float
    period_hat: float | None
    sigma_max: float | None
    sync_rate: float | None
    n_train: int
    n_clean: int
    seed: int

    @property
    def key(self) -> str:
        return f"{self.pr_label}_{self.trajectory}_{self.cleaning_mode}"


@dataclass
class ReferenceRow:
    pr_label: str
    beta: float
    analytic_ap: float
    analytic_of1: float
    reference_ap: float
    reference_of1: float


@dataclass
class ExperimentReport:
    cells: list
    reference: list
    master_seed: int = 0

    def cell(self, pr_label, trajectory, mode) -> CellResult:
        for c in self.cells:
            if (c.pr_label, c.trajectory, c.cleaning_mode) == (pr_label, trajectory, mode):
                return c
        raise KeyError((pr_label, trajectory, mode))

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "cells": [asdict(c) for c in self.cells],
            "reference": [asdict(r) for r in self.reference],
        }

    @classmethod
    def from_dict(cls, data) -> "ExperimentReport":
        return cls([CellResult(**c) for c in data["cells"]],
                   [ReferenceRow(**r) for r in data["reference"]],
                   data.get("master_seed", 0))


@dataclass
class CellArtifacts:
    """Bulky per-cell outputs kept out of the report itself."""

    evaluation: FilterEvaluation | None = None
    model: PeriodicTrajectoryFilter | None = None


class _KeepAll:
    synced_ = True
    phase_offset_ = 0.0

    def sync_phase(self, X, t):
        return self

    def decide(self, X, t):
        n = len(t)
        keep = np.ones(n, bool)
        nan = np.full(n, np.nan)
        return keep, np.full(n, "keep"), nan, nan


def scenario_seed(master_seed, pr_label, trajectory, purpose) -> int:
    return derive_seed(int(master_seed), pr_label, trajectory, purpose)


def train_filter(run, mode: str, gp_search=True) -> tuple[PeriodicTrajectoryFilter, dict]:
    """Preprocess a raw training run and fit the filter on it.

    Raises PeriodNotIdentifiable when the time-axis clustering fails.
    """
    if mode == "manual":
        run = manual_clean(run)
    elif mode != "auto":
        raise ValueError(f"unknown cleaning mode {mode!r}")
    period, labeling = estimate_period(run)
    aligned = align(run, period, n_periods=labeling.n_clusters)
    cleaned = auto_clean(aligned)
    if len(cleaned) < 2:
        raise ValueError("cleaning left fewer than two training points")
    gp = GaussianProcessRegressor(optimize=gp_search)
    filt = PeriodicTrajectoryFilter(regressor=gp).fit(cleaned)
    info = {"period_hat": period, "n_train": len(aligned), "n_clean": len(cleaned),
            "aligned": aligned, "cleaned": cleaned}
    return filt, info


def fallback_filter(run, gp_search=True) -> PeriodicTrajectoryFilter:
    """Filter trained on raw positions with the time test disabled."""
    gp = GaussianProcessRegressor(optimize=gp_search)
    return PeriodicTrajectoryFilter(regressor=gp).fit(run.positions, run.t, period=None)


def run_cell(cfg: ExperimentConfig, pr: PRCurveModel, trajectory: str, mode: str
             ) -> tuple[CellResult, CellArtifacts]:
    traj = get_trajectory(trajectory)
    train_seed = scenario_seed(cfg.master_seed, pr.label, trajectory, "train")
    val_seed = scenario_seed(cfg.master_seed, pr.label, trajectory, "validation")
    run = simulate_run(traj, pr, cfg.train_recall, cfg.sim_config(cfg.n_train_periods, train_seed))
    val_cfg = cfg.sim_config(cfg.n_validation_periods, val_seed)

    status, degraded, model = STATUS_OK, False, None
    info = {"period_hat": None, "n_train": len(run), "n_clean": 0}
    try:
        model, info = train_filter(run, mode, cfg.gp_search)
    except PeriodNotIdentifiable:
        status = STATUS_NO_PERIOD
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.warning("cell %s/%s/%s failed: %s", pr.label, trajectory, mode, exc)
        status = STATUS_FAILED

    if model is None and status == STATUS_NO_PERIOD and cfg.failure_policy == "fallback":
        model = fallback_filter(run if mode == "auto" else manual_clean(run), cfg.gp_search)
        status, degraded = STATUS_FALLBACK, True

    if model is None:
        degraded = True
        evaluation = post_filter_pr(traj, pr, _KeepAll(), cfg.recall_grid, val_cfg)
        ref_ap = average_precision(evaluation.reference)
        ref_of1 = optimal_f1(evaluation.reference)[0]
        post_ap, post_of1, sync_rate, sigma_max = ref_ap, ref_of1, None, None
    else:
        evaluation = post_filter_pr(traj, pr, model, cfg.recall_grid, val_cfg,
                                    provenance=f"post_filter_{mode}",
                                    keep_decisions=cfg.write_decisions)
        ref_ap = average_precision(evaluation.reference)
        ref_of1 = optimal_f1(evaluation.reference)[0]
        post_ap = average_precision(evaluation.post)
        post_of1 = optimal_f1(evaluation.post)[0]
        sync_rate = float(np.mean([d["synced"] for d in evaluation.details]))
        sigma_max = model.sigma_max_

    cell = CellResult(
        pr_label=pr.label, trajectory=trajectory, cleaning_mode=mode,
        status=status, degraded=degraded,
        reference_ap=ref_ap, reference_of1=ref_of1, post_ap=post_ap, post_of1=post_of1,
        period_hat=info["period_hat"], sigma_max=sigma_max, sync_rate=sync_rate,
        n_train=int(info["n_train"]), n_clean=int(info["n_clean"]),
        seed=scenario_seed(cfg.master_seed, pr.label, trajectory, mode),
    )
    return cell, CellArtifacts(evaluation, model)


def _run_cell_job(cfg, pr, trajectory, mode, out_dir):
    cell, artifacts = run_cell(cfg, pr, trajectory, mode)
    if out_dir is not None:
        write_cell_artifacts(os.path.join(out_dir, "cells", cell.key), artifacts,
                             cfg.write_decisions)
    return cell


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   n_jobs: int | None = None) -> ExperimentReport:
    """Run every (PR model, trajectory, mode) cell.

    Cells only depend on their own derived seeds, so ``n_jobs`` does not
    change the result. With ``out_dir`` per-cell artifacts are written as
    cells complete.
    """
    models = calibrate_pr_models(cfg.ap_targets)
    jobs = [(pr, traj, mode) for pr in models for traj in cfg.trajectories
            for mode in cfg.cleaning_modes]
    n_jobs = cfg.n_jobs if n_jobs is None else n_jobs
    if n_jobs == 1:
        cells = [_run_cell_job(cfg, *job, out_dir) for job in jobs]
    else:
        cells = Parallel(n_jobs=n_jobs)(delayed(_run_cell_job)(cfg, *job, out_dir)
                                        for job in jobs)
    reference = []
    for pr in models:
        own = {c.trajectory: c for c in cells if c.pr_label == pr.label}
        reference.append(ReferenceRow(
            pr_label=pr.label, beta=pr.beta,
            analytic_ap=pr.average_precision, analytic_of1=analytic_optimal_f1(pr),
            reference_ap=float(np.mean([c.reference_ap for c in own.values()])),
            reference_of1=float(np.mean([c.reference_of1 for c in own.values()])),
        ))
    return ExperimentReport(cells, reference, cfg.master_seed)


# ---------------------------------------------------------------- emission

REPORT_COLUMNS = ("row_type",) + CELL_FIELDS + ("beta", "analytic_ap", "analytic_of1")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.reference:
            row = dict(asdict(r), row_type="reference")
            w.writerow([_fmt(row.get(c)) for c in REPORT_COLUMNS])
        for c in report.cells:
            row = dict(asdict(c), row_type="cell")
            w.writerow([_fmt(row.get(col)) for col in REPORT_COLUMNS])


_INT_FIELDS = {"n_train", "n_clean", "seed"}
_STR_FIELDS = {"pr_label", "trajectory", "cleaning_mode", "status"}


def _parse(name, text):
    if name in _STR_FIELDS:
        return text
    if text == "":
        return None
    if name == "degraded":
        return text == "true"
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def read_report_csv(path, master_seed=0) -> ExperimentReport:
    cells, reference = [], []
    ref_names = [f.name for f in fields(ReferenceRow)]
    cell_names = [f.name for f in fields(CellResult)]
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["row_type"] == "reference":
                reference.append(ReferenceRow(**{n: _parse(n, row[n]) for n in ref_names}))
            else:
                cells.append(CellResult(**{n: _parse(n, row[n]) for n in cell_names}))
    return ExperimentReport(cells, reference, master_seed)


def write_table1(report: ExperimentReport, out_dir) -> None:
    """Summary pivots per metric: reference row, then one row per (mode, trajectory)."""
    labels = [r.pr_label for r in report.reference]
    trajs = sorted({c.trajectory for c in report.cells})
    modes = [m for m in MODES if any(c.cleaning_mode == m for c in report.cells)]
    for metric in ("ap", "of1"):
        with open(os.path.join(out_dir, f"table_{metric}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row"] + labels)
            w.writerow(["reference"] + [f"{getattr(r, 'reference_' + metric):.3f}"
                                        for r in report.reference])
            for mode in modes:
                for traj in trajs:
                    vals = []
                    for lab in labels:
                        c = report.cell(lab, traj, mode)
                        v = f"{getattr(c, 'post_' + metric):.3f}"
                        vals.append(v + ("*" if c.degraded else ""))
                    w.writerow([f"{mode}:{traj}"] + vals)


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json")) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        write_report_csv(report, path)
        write_table1(report, out_dir)
        written += [path, os.path.join(out_dir, "table_ap.csv"),
                    os.path.join(out_dir, "table_of1.csv")]
    if "json" in formats:
        data = report.to_dict()
        jsonschema.validate(data, load_schema("report.schema.json"))
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
        written.append(path)
    return written


def write_cell_artifacts(cell_dir, artifacts: CellArtifacts, write_decisions=True) -> None:
    os.makedirs(cell_dir, exist_ok=True)
    ev = artifacts.evaluation
    with open(os.path.join(cell_dir, "pr_series.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "recall", "precision"])
        for name, s in (("reference", ev.reference), ("post", ev.post)):
            for r, p in s.points():
                w.writerow([name, repr(r), repr(p)])
    if artifacts.model is not None:
        artifacts.model.save(os.path.join(cell_dir, "model.json"))
    if write_decisions and ev.decisions:
        write_decisions_csv(os.path.join(cell_dir, "decisions.csv"), ev.decisions)


def write_decisions_csv(path, decisions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_recall", "t", "x", "y", "t_hat", "sigma_hat", "decision", "reason"])
        for recall, run, keep, reasons, t_hat, sigma in decisions:
            for i in range(len(run)):
                w.writerow([recall, repr(float(run.t[i])), repr(float(run.x[i])),
                            repr(float(run.y[i])), repr(float(t_hat[i])),
                            repr(float(sigma[i])), "keep" if keep[i] else "discard",
                            reasons[i]])


def read_cell_series(cell_dir) -> tuple[PRSeries, PRSeries]:
    pts = {"reference": [], "post": []}
    with open(os.path.join(cell_dir, "pr_series.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            pts[row["series"]].append((float(row["recall"]), float(row["precision"])))
    return PRSeries.from_points(pts["reference"]), PRSeries.from_points(pts["post"], "post")


def check_report(out_dir, tol=1e-12) -> list[str]:
    """Recompute every cell's metrics from its pr_series.csv; return mismatches."""
    report = read_report_csv(os.path.join(out_dir, "report.csv"))
    problems = []
    for c in report.cells:
        cell_dir = os.path.join(out_dir, "cells", c.key)
        try:
            ref, post = read_cell_series(cell_dir)
        except OSError as exc:
            problems.append(f"{c.key}: {exc}")
            continue
        expected = {
            "reference_ap": average_precision(ref),
            "reference_of1": optimal_f1(ref)[0],
            "post_ap": average_precision(post) if not c.degraded or c.status == STATUS_FALLBACK
            else average_precision(ref),
            "post_of1": optimal_f1(post)[0] if not c.degraded or c.status == STATUS_FALLBACK
            else optimal_f1(ref)[0],
        }
        for name, value in expected.items():
            if not math.isclose(getattr(c, name), value, rel_tol=0, abs_tol=tol):
                problems.append(f"{c.key}: {name} {getattr(c, name)!r} != {value!r}")
    return problems
