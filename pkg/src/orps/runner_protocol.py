"""Job/report documents exchanged with guest runners.

The schema lives in ``schemas/runner_protocol.schema.json`` at the repository
root and is the single contract shared by the host executor, the fake runner
used by this package's test suite, and the real sandbox runner package.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .config import ResourceLimits
from .errors import ExecutorFault

PASS = "pass"
FAIL = "fail"
ERROR = "error"
TIMEOUT = "timeout"
STATUSES = (PASS, FAIL, ERROR, TIMEOUT)

MODES = ("execute", "static_only", "check_only")


@dataclass(frozen=True)
class StaticMetrics:
    code_length_lines: int = 0
    ast_node_count: int = 0
    cyclomatic: int = 0
    cognitive: int = 0


@dataclass(frozen=True)
class PerTest:
    index: int
    status: str
    message: str = ""
    wall_ms: float = 0.0
    cpu_ms: float = 0.0
    peak_memory_bytes: int = 0


@dataclass(frozen=True)
class RunnerJob:
    mode: str
    code: str
    tests: list[str] = field(default_factory=list)
    limits: ResourceLimits = field(default_factory=ResourceLimits)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "code": self.code,
            "tests": list(self.tests),
            "limits": {
                "cpu_seconds": self.limits.cpu_seconds,
                "memory_bytes": self.limits.memory_bytes,
                "max_tests": self.limits.max_tests,
            },
        }


@dataclass(frozen=True)
class RunnerReport:
    load_ok: bool
    load_message: str = ""
    per_test: list[PerTest] = field(default_factory=list)
    static: StaticMetrics | None = None
    limits_enforced: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "load_ok": self.load_ok,
            "load_message": self.load_message,
            "per_test": [asdict(t) for t in self.per_test],
            "static": None if self.static is None else asdict(self.static),
            "limits_enforced": self.limits_enforced,
        }


def _schema_path() -> Path:
    # The schema is a repo-level file; fall back to a packaged copy so an
    # installed wheel still validates.
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "schemas" / "runner_protocol.schema.json"
        if candidate.exists():
            return candidate
    packaged = resources.files("orps").joinpath("runner_protocol.schema.json")
    return Path(str(packaged))


def load_schema() -> dict[str, Any]:
    return json.loads(_schema_path().read_text(encoding="utf-8"))


def parse_report(payload: Any) -> RunnerReport:
    """Convert a decoded report document, raising ExecutorFault on violations."""
    if not isinstance(payload, dict):
        raise ExecutorFault("runner report is not a JSON object")
    try:
        load_ok = payload["load_ok"]
        load_message = payload["load_message"]
        per_test_raw = payload["per_test"]
        static_raw = payload["static"]
        limits_enforced = payload["limits_enforced"]
    except KeyError as exc:
        raise ExecutorFault(f"runner report missing field {exc}")
    if not isinstance(load_ok, bool) or not isinstance(limits_enforced, bool):
        raise ExecutorFault("runner report boolean fields have wrong types")
    if not isinstance(per_test_raw, list):
        raise ExecutorFault("runner report per_test must be a list")

    per_test = []
    for entry in per_test_raw:
        try:
            status = entry["status"]
            if status not in STATUSES:
                raise ExecutorFault(f"unknown per-test status {status!r}")
            per_test.append(
                PerTest(
                    index=int(entry["index"]),
                    status=status,
                    message=str(entry["message"]),
                    wall_ms=float(entry["wall_ms"]),
                    cpu_ms=float(entry["cpu_ms"]),
                    peak_memory_bytes=int(entry["peak_memory_bytes"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ExecutorFault(f"malformed per-test entry: {exc}")

    static = None
    if static_raw is not None:
        try:
            static = StaticMetrics(
                code_length_lines=int(static_raw["code_length_lines"]),
                ast_node_count=int(static_raw["ast_node_count"]),
                cyclomatic=int(static_raw["cyclomatic"]),
                cognitive=int(static_raw["cognitive"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ExecutorFault(f"malformed static block: {exc}")

    if not load_ok and any(t.status != ERROR for t in per_test):
        raise ExecutorFault("report violates invariant: load_ok=false requires all-error tests")

    return RunnerReport(
        load_ok=load_ok,
        load_message=str(load_message),
        per_test=per_test,
        static=static,
        limits_enforced=limits_enforced,
    )


def decode_report(text: str) -> RunnerReport:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ExecutorFault(f"runner emitted invalid JSON: {exc}")
    return parse_report(payload)
