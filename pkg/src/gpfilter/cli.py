"""Command line entry point: ``gpfilter <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .experiment import (
    STATUS_OK,
    ConfigError,
    ExperimentConfig,
    calibrate_pr_models,
    check_report,
    emit_report,
    read_report_csv,
    run_experiment,
    train_filter,
    write_decisions_csv,
    write_table1,
)
from .filter import PeriodicTrajectoryFilter
from .metrics import average_precision, optimal_f1, post_filter_pr
from .preprocess import PeriodNotIdentifiable
from .simulator import SimulationConfig, load_run, simulate_run
from .trajectory import get_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _pr_model(cfg, label):
    for pr in calibrate_pr_models(cfg.ap_targets):
        if pr.label.lower() == label.lower():
            return pr
    raise ConfigError(f"unknown PR model {label!r}")


def cmd_simulate(args, cfg):
    traj = get_trajectory(args.trajectory)
    pr = _pr_model(cfg, args.pr)
    seed = cfg.master_seed
    run = simulate_run(traj, pr, args.recall,
                       cfg.sim_config(args.periods or cfg.n_train_periods, seed))
    os.makedirs(cfg.output_dir, exist_ok=True)
    run.to_csv(os.path.join(cfg.output_dir, "run.csv"))
    run.to_json(os.path.join(cfg.output_dir, "run.json"))
    print(f"{len(run)} detections ({int(run.truth.sum())} TP) -> {cfg.output_dir}")
    return EXIT_OK


def cmd_train(args, cfg):
    run = load_run(args.run)
    try:
        filt, info = train_filter(run, args.mode, cfg.gp_search)
    except PeriodNotIdentifiable as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "model.json")
    filt.save(path)
    print(f"period={info['period_hat']:.4f}s sigma_max={filt.sigma_max_:.4f}s "
          f"points {info['n_train']}->{info['n_clean']} -> {path}")
    return EXIT_OK


def cmd_filter(args, cfg):
    filt = PeriodicTrajectoryFilter.load(args.model)
    run = load_run(args.run)
    if not args.no_sync:
        filt = filt.sync_phase(run.positions, run.t)
    keep, reasons, t_hat, sigma = filt.decide(run.positions, run.t)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "decisions.csv")
    write_decisions_csv(path, [(float("nan"), run, keep, reasons, t_hat, sigma)])
    print(f"kept {int(keep.sum())}/{len(run)} (synced={getattr(filt, 'synced_', False)}) -> {path}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    filt = PeriodicTrajectoryFilter.load(args.model)
    traj = get_trajectory(args.trajectory)
    pr = _pr_model(cfg, args.pr)
    ev = post_filter_pr(traj, pr, filt, cfg.recall_grid,
                        cfg.sim_config(cfg.n_validation_periods, cfg.master_seed))
    os.makedirs(cfg.output_dir, exist_ok=True)
    ev.reference.to_csv(os.path.join(cfg.output_dir, "reference_pr.csv"))
    ev.post.to_csv(os.path.join(cfg.output_dir, "post_pr.csv"))
    for name, s in (("reference", ev.reference), ("post", ev.post)):
        print(f"{name:9s} AP={average_precision(s):.3f} oF1={optimal_f1(s)[0]:.3f}")
    return EXIT_OK


def cmd_report(args, cfg):
    out = cfg.output_dir
    report = read_report_csv(os.path.join(out, "report.csv"), cfg.master_seed)
    write_table1(report, out)
    for metric in ("ap", "of1"):
        with open(os.path.join(out, f"table_{metric}.csv")) as fh:
            print(f"[{metric}]\n{fh.read()}")
    if args.check:
        problems = check_report(out)
        for p in problems:
            print(p, file=sys.stderr)
        print("consistency check:", "FAIL" if problems else "ok")
        return EXIT_PIPELINE if problems else EXIT_OK
    return EXIT_OK


def cmd_run_all(args, cfg):
    report = run_experiment(cfg, out_dir=cfg.output_dir,
                            n_jobs=args.jobs if args.jobs is not None else cfg.n_jobs)
    emit_report(report, cfg.output_dir)
    bad = [c for c in report.cells if c.status != STATUS_OK]
    for c in report.cells:
        print(f"{c.pr_label} {c.trajectory} {c.cleaning_mode:6s} {c.status:24s} "
              f"AP {c.reference_ap:.3f}->{c.post_ap:.3f}  oF1 {c.reference_of1:.3f}->{c.post_of1:.3f}")
    if bad and args.strict:
        return EXIT_PIPELINE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gpfilter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate one detection run")
    p.add_argument("--trajectory", default="gamma3")
    p.add_argument("--pr", default="PR3")
    p.add_argument("--recall", type=float, default=0.9)
    p.add_argument("--periods", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train a filter from a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--mode", choices=("auto", "manual"), default="auto")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("filter", parents=[common], help="apply a trained filter to a run")
    p.add_argument("--model", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--no-sync", action="store_true")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", parents=[common], help="PR curves before/after filtering")
    p.add_argument("--model", required=True)
    p.add_argument("--trajectory", default="gamma3")
    p.add_argument("--pr", default="PR3")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="print tables of a finished run")
    p.add_argument("--check", action="store_true", help="recompute metrics from cell files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run-all", parents=[common], help="full experiment matrix")
    p.add_argument("--jobs", type=int)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
