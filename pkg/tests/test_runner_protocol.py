"""Protocol conformance: the committed schema, the golden documents, and the
fake runner driven as a real child process."""

from __future__ import annotations

import json
import subprocess
import sys

import jsonschema
import pytest

from orps.errors import ExecutorFault
from orps.executor import default_runner_cmd
from orps.runner_protocol import load_schema, parse_report

from conftest import REPO_ROOT

GOLDEN = REPO_ROOT / "schemas" / "golden"
GOLDEN_NAMES = sorted(p.name[4:-5] for p in GOLDEN.glob("job_*.json"))


def _schema_for(part: str) -> dict:
    schema = load_schema()
    return {"$ref": f"#/$defs/{part}", "$defs": schema["$defs"]}


def _run_fake(job_bytes: bytes, fixtures: str | None = None) -> subprocess.CompletedProcess:
    cmd = default_runner_cmd()
    if fixtures:
        cmd += ["--fixtures", fixtures]
    return subprocess.run(cmd, input=job_bytes, capture_output=True, timeout=30)


def test_schema_file_is_valid_jsonschema():
    schema = load_schema()
    jsonschema.Draft202012Validator.check_schema(schema)
    assert set(schema["$defs"]) >= {"job", "report", "per_test", "static"}


@pytest.mark.parametrize("name", GOLDEN_NAMES)
def test_golden_documents_validate_against_schema(name):
    job = json.loads((GOLDEN / f"job_{name}.json").read_text())
    report = json.loads((GOLDEN / f"report_{name}.json").read_text())
    jsonschema.validate(job, _schema_for("job"))
    jsonschema.validate(report, _schema_for("report"))


@pytest.mark.parametrize("name", GOLDEN_NAMES)
def test_fake_runner_reproduces_golden_reports(name):
    job_bytes = (GOLDEN / f"job_{name}.json").read_bytes()
    proc = _run_fake(job_bytes)
    assert proc.returncode == 0, proc.stderr
    produced = json.loads(proc.stdout)
    expected = json.loads((GOLDEN / f"report_{name}.json").read_text())
    assert produced == expected
    jsonschema.validate(produced, _schema_for("report"))


def test_fake_runner_harness_fault_on_malformed_job():
    proc = _run_fake(b"this is not json")
    assert proc.returncode != 0
    diagnostic = json.loads(proc.stdout)
    assert "error" in diagnostic


def test_fake_runner_respects_fixture_templates(fixtures_file):
    job = {
        "mode": "execute",
        "code": "# outcome: buggy_a\ndef solve(v):\n    return 0\n",
        "tests": ["assert solve([1]) == 1"] * 3,
        "limits": {"cpu_seconds": 5.0, "memory_bytes": 1 << 29, "max_tests": 15},
    }
    proc = _run_fake(json.dumps(job).encode(), fixtures=str(fixtures_file))
    report = json.loads(proc.stdout)
    assert [t["status"] for t in report["per_test"]] == ["pass", "fail", "fail"]
    assert report["per_test"][1]["message"] == "wrong total"


def test_fake_runner_load_failure_marks_all_tests_error(fixtures_file):
    job = {
        "mode": "execute",
        "code": "def solve(v)\n    return 0\n",
        "tests": ["assert True", "assert True"],
        "limits": {"cpu_seconds": 5.0, "memory_bytes": 1 << 29, "max_tests": 15},
    }
    proc = _run_fake(json.dumps(job).encode(), fixtures=str(fixtures_file))
    report = json.loads(proc.stdout)
    assert report["load_ok"] is False
    assert all(t["status"] == "error" for t in report["per_test"])
    assert "SyntaxError" in report["load_message"]
    jsonschema.validate(report, _schema_for("report"))


def test_parse_report_rejects_protocol_violations():
    with pytest.raises(ExecutorFault):
        parse_report({"load_ok": True})  # missing fields
    with pytest.raises(ExecutorFault):
        parse_report(
            {
                "load_ok": False,
                "load_message": "x",
                "per_test": [
                    {
                        "index": 0,
                        "status": "pass",  # violates load_ok=false => all error
                        "message": "",
                        "wall_ms": 0,
                        "cpu_ms": 0,
                        "peak_memory_bytes": 0,
                    }
                ],
                "static": None,
                "limits_enforced": True,
            }
        )
    with pytest.raises(ExecutorFault):
        parse_report(
            {
                "load_ok": True,
                "load_message": "",
                "per_test": [
                    {
                        "index": 0,
                        "status": "exploded",  # unknown status
                        "message": "",
                        "wall_ms": 0,
                        "cpu_ms": 0,
                        "peak_memory_bytes": 0,
                    }
                ],
                "static": None,
                "limits_enforced": True,
            }
        )


def test_fake_runner_truncates_to_max_tests():
    job = {
        "mode": "execute",
        "code": "def f():\n    return 1\n",
        "tests": [f"assert f() == 1  # {i}" for i in range(20)],
        "limits": {"cpu_seconds": 5.0, "memory_bytes": 1 << 29, "max_tests": 15},
    }
    proc = _run_fake(json.dumps(job).encode())
    report = json.loads(proc.stdout)
    assert len(report["per_test"]) == 15
