from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[2]
SCHEMA_PATH = REPO_ROOT / "schemas" / "runner_protocol.schema.json"

DEFAULT_LIMITS = {"cpu_seconds": 5.0, "memory_bytes": 512 * 1024 * 1024, "max_tests": 15}


def make_job(code, tests=(), mode="execute", **limit_overrides):
    limits = dict(DEFAULT_LIMITS)
    limits.update(limit_overrides)
    return {"mode": mode, "code": code, "tests": list(tests), "limits": limits}


def run_runner(job, timeout=60):
    payload = job if isinstance(job, (bytes, str)) else json.dumps(job)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    return subprocess.run(
        [sys.executable, "-m", "orps_runner"],
        input=payload,
        capture_output=True,
        timeout=timeout,
    )


def run_report(job, timeout=60):
    proc = run_runner(job, timeout=timeout)
    assert proc.returncode == 0, proc.stdout.decode() + proc.stderr.decode()
    return json.loads(proc.stdout)


def report_schema():
    schema = json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))
    return {"$ref": "#/$defs/report", "$defs": schema["$defs"]}


# -- acceptance summary ------------------------------------------------------

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
    terminalreporter.write_sep("-", "acceptance criteria (sandbox runner)")
    for name in sorted(_acceptance_results):
        terminalreporter.write_line(f"{_acceptance_results[name]:4s}  {name}")
