import os
from pathlib import Path

import pytest

from pgy.engine import CheckpointDir, VariantRule, run
from pgy.genealogy import GenealogyForest

CACHE = Path(os.environ.get("PGY_CACHE", Path(__file__).resolve().parents[1] / ".cache"))
HORIZON = 120


def ensure_floor_run(to_stage: int = HORIZON) -> Path:
    """Floor-variant checkpoints up to ``to_stage``; computed once, then reused."""
    path = CACHE / "floor"
    ck = CheckpointDir(path, VariantRule.floor())
    state = ck.start()
    if state.s < to_stage:
        run(state, to_stage, sink=ck)
    return path


@pytest.fixture(scope="session")
def floor_dir():
    return ensure_floor_run()


@pytest.fixture(scope="session")
def forest120(floor_dir):
    return GenealogyForest.from_dir(floor_dir, HORIZON)


@pytest.fixture(scope="session")
def forest30():
    return GenealogyForest.from_run(to_stage=30)


# ---------------------------------------------------------------------------
# per-criterion summary for the acceptance suite

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    num, title = mark
    entry = _CRITERIA.setdefault(num, {"title": title, "ok": 0, "bad": []})
    if report.outcome == "passed":
        entry["ok"] += 1
    else:
        entry["bad"].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        status = "PASS" if not e["bad"] and e["ok"] else "FAIL"
        extra = f" (failed: {', '.join(e['bad'])})" if e["bad"] else ""
        tr.write_line(f"criterion {num:2d} {status}: {e['title']} [{e['ok']} passed]{extra}")
