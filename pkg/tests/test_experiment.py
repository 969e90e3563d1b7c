import json

import jsonschema
import numpy as np
import pytest

from gpfilter.cli import EXIT_CONFIG, EXIT_OK, EXIT_PIPELINE, main
from gpfilter.experiment import (
    STATUS_FALLBACK,
    STATUS_NO_PERIOD,
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    calibrate_pr_models,
    check_report,
    emit_report,
    load_schema,
    read_report_csv,
    run_experiment,
    scenario_seed,
)
from gpfilter.trajectory import PRCurveModel

SMALL = dict(ap_targets=[0.942, 0.975], trajectories=["gamma3"], recall_grid=[0.5, 0.9],
             n_validation_periods=3, master_seed=7)
FAILING = dict(ap_targets=[0.3], trajectories=["gamma3"], recall_grid=[0.5],
               n_validation_periods=2, cleaning_modes=["auto"])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = ExperimentConfig(**SMALL)
    report = run_experiment(cfg, out_dir=str(out))
    emit_report(report, str(out))
    return report, out


@pytest.mark.parametrize("ap, beta", [(0.811, 0.811 / 0.189), (0.5, 1.0), (0.975, 39.0)])
def test_calibration(ap, beta):
    model = PRCurveModel.from_ap(ap)
    assert model.beta == pytest.approx(beta, rel=1e-12)
    assert model.average_precision == pytest.approx(ap, rel=1e-12)


def test_calibration_labels_ascending():
    models = calibrate_pr_models([0.975, 0.811, 0.942, 0.883])
    assert [m.label for m in models] == ["PR1", "PR2", "PR3", "PR4"]
    assert [m.average_precision for m in models] == pytest.approx([0.811, 0.883, 0.942, 0.975])
    with pytest.raises(ValueError):
        PRCurveModel.from_ap(1.0)


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n_train_periods, cfg.train_recall, cfg.n_validation_periods) == (5, 0.9, 10)
    assert len(cfg.recall_grid) == 20 and cfg.recall_grid[-1] == 1.0


@pytest.mark.parametrize("bad", [
    {"train_recall": 1.5},
    {"trajectories": ["gamma9"]},
    {"unknown_key": 1},
    {"failure_policy": "ignore"},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_unreadable(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(p)


def test_report_shape(small_run):
    report, out = small_run
    assert len(report.cells) == 2 * 1 * 2 and len(report.reference) == 2
    for c in report.cells:
        for name in ("reference_ap", "reference_of1", "post_ap", "post_of1"):
            assert 0 <= getattr(c, name) <= 1
        assert (out / "cells" / c.key / "pr_series.csv").exists()
        assert (out / "cells" / c.key / "model.json").exists()
        assert (out / "cells" / c.key / "decisions.csv").exists()
    header = (out / "cells" / report.cells[0].key / "decisions.csv").read_text().splitlines()[0]
    assert header == "grid_recall,t,x,y,t_hat,sigma_hat,decision,reason"


def test_modes_share_validation_runs(small_run):
    report, _ = small_run
    for pr in ("PR1", "PR2"):
        auto = report.cell(pr, "gamma3", "auto")
        manual = report.cell(pr, "gamma3", "manual")
        assert auto.reference_ap == manual.reference_ap
        assert auto.seed != manual.seed
    assert scenario_seed(7, "PR1", "gamma3", "train") == scenario_seed(7, "PR1", "gamma3", "train")


def test_csv_round_trip(small_run):
    report, out = small_run
    back = read_report_csv(out / "report.csv", report.master_seed)
    assert back.to_dict() == report.to_dict()


def test_json_schema(small_run):
    report, out = small_run
    data = json.loads((out / "report.json").read_text())
    jsonschema.validate(data, load_schema("report.schema.json"))
    assert ExperimentReport.from_dict(data).to_dict() == report.to_dict()


def test_self_consistency(small_run):
    _, out = small_run
    assert check_report(str(out)) == []


def test_check_detects_tampering(small_run, tmp_path):
    report, _ = small_run
    tampered = ExperimentReport.from_dict(report.to_dict())
    tampered.cells[0].post_ap = 0.0
    emit_report(tampered, str(tmp_path))
    src = small_run[1] / "cells"
    (tmp_path / "cells").symlink_to(src)
    assert len(check_report(str(tmp_path))) == 1


def test_rerun_byte_identical(small_run, tmp_path):
    _, out = small_run
    cfg = ExperimentConfig(**SMALL)
    emit_report(run_experiment(cfg, n_jobs=2), str(tmp_path))
    assert (tmp_path / "report.csv").read_bytes() == (out / "report.csv").read_bytes()


def test_failure_recorded_with_reference_metrics():
    report = run_experiment(ExperimentConfig(**FAILING))
    (cell,) = report.cells
    assert cell.status == STATUS_NO_PERIOD and cell.degraded
    assert cell.post_ap == cell.reference_ap and cell.post_of1 == cell.reference_of1
    assert cell.period_hat is None


def test_failure_fallback_policy():
    report = run_experiment(ExperimentConfig(**FAILING, failure_policy="fallback"))
    (cell,) = report.cells
    assert cell.status == STATUS_FALLBACK and cell.degraded
    assert np.isfinite(cell.sigma_max)


def _write_config(path, **kw):
    path.write_text(json.dumps(kw))
    return str(path)


def test_cli_pipeline(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["simulate", "--seed", "3", "--out", out, "--pr", "PR4"]) == EXIT_OK
    assert (tmp_path / "run.csv").read_text().splitlines()[0] == "t,x,y,truth"
    assert main(["train", "--run", f"{out}/run.csv", "--mode", "manual", "--out", out]) == EXIT_OK
    model = json.loads((tmp_path / "model.json").read_text())
    jsonschema.validate(model, load_schema("model.schema.json"))
    assert main(["filter", "--model", f"{out}/model.json", "--run", f"{out}/run.json",
                 "--out", out]) == EXIT_OK
    assert (tmp_path / "decisions.csv").exists()
    cfg = _write_config(tmp_path / "c.json", recall_grid=[0.5, 1.0], n_validation_periods=2)
    assert main(["evaluate", "--model", f"{out}/model.json", "--pr", "PR4",
                 "--config", cfg, "--out", out]) == EXIT_OK
    assert "post" in capsys.readouterr().out


def test_cli_run_all_and_report(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.json", **SMALL)
    out = str(tmp_path / "res")
    assert main(["run-all", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["report", "--config", cfg, "--out", out, "--check"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "consistency check: ok" in text and "[ap]" in text


def test_cli_exit_codes(tmp_path):
    bad = _write_config(tmp_path / "bad.json", train_recall=3)
    assert main(["run-all", "--config", bad, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--pr", "PR9", "--out", str(tmp_path)]) == EXIT_CONFIG
    failing = _write_config(tmp_path / "f.json", **FAILING)
    assert main(["run-all", "--config", failing, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run-all", "--config", failing, "--out", str(tmp_path / "b"),
                 "--strict"]) == EXIT_PIPELINE
