from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scenario import FAKE_FIXTURES, InProcessFakeExecution  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def fake_exec() -> InProcessFakeExecution:
    return InProcessFakeExecution()


@pytest.fixture
def fixtures_file(tmp_path) -> Path:
    import json

    path = tmp_path / "fake_fixtures.json"
    path.write_text(json.dumps(FAKE_FIXTURES), encoding="utf-8")
    return path


@pytest.fixture
def subprocess_exec(fixtures_file):
    """Execution service driving the fake runner as a real child process."""
    from orps.executor import ExecutionService, default_runner_cmd

    cmd = default_runner_cmd() + ["--fixtures", str(fixtures_file)]
    return ExecutionService(runner_cmd=cmd, timing_source="report")


# ---------------------------------------------------------------------------
# Acceptance summary: one pass/fail line per criterion at the end of the run.

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "setup" and report.skipped:
        _acceptance_results[name] = "SKIP"
    elif report.when == "call":
        _acceptance_results[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_acceptance_results):
        verdict = _acceptance_results[name]
        terminalreporter.write_line(f"{verdict:4s}  {name}")
