import numpy as np
import pytest

from gpfilter.experiment import calibrate_pr_models
from gpfilter.simulator import RunRecord


def make_run(t, x=None, y=None, truth=None, n_obj=None):
    t = np.asarray(t, dtype=float)
    n = t.size
    return RunRecord(
        t=t,
        x=np.zeros(n) if x is None else x,
        y=np.zeros(n) if y is None else y,
        truth=np.ones(n, bool) if truth is None else truth,
        frame=np.rint(t / 0.1).astype(int),
        n_frames=int(np.rint(t.max() / 0.1)) + 1 if n else 0,
        n_obj=n if n_obj is None else n_obj,
    )


@pytest.fixture(scope="session")
def pr_models():
    return dict(zip(["PR1", "PR2", "PR3", "PR4"], calibrate_pr_models()))


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
