"""Protocol-conformant fake guest runner.

Speaks the exact stdin/stdout job/report protocol of the real sandbox runner
but never executes guest code: outcomes come from fixture templates, so the
rest of the stack can be tested deterministically without a sandbox.

Behaviour is selected by an ``# outcome: <name>`` marker line inside the
guest code. Templates are looked up in a JSON fixtures file (path given by
the ``ORPS_FAKE_FIXTURES`` environment variable or ``--fixtures``):

    {
      "outcomes": {
        "buggy": {"statuses": ["pass", "fail"], "message": "expected 3 got 4",
                   "cpu_ms": 2.0, "static": {"cyclomatic": 4}}
      },
      "default": {"pass_count": 0}
    }

A template may set ``statuses`` (cycled over the tests), ``pass_count``
(first N tests pass, the rest fail), ``load_ok``, ``message``, ``cpu_ms``,
``peak_memory_bytes`` and ``static`` overrides. Code that does not compile
always yields ``load_ok=false`` regardless of the template. All synthesized
numbers are deterministic so reports are byte-stable across runs.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from typing import Any

FIXTURES_ENV = "ORPS_FAKE_FIXTURES"

_MARKER = re.compile(r"^\s*#\s*outcome:\s*(\S+)\s*$", re.MULTILINE)


def _load_fixtures(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _template_for(code: str, fixtures: dict[str, Any]) -> dict[str, Any]:
    match = _MARKER.search(code)
    outcomes = fixtures.get("outcomes", {})
    if match and match.group(1) in outcomes:
        return outcomes[match.group(1)]
    return fixtures.get("default", {})


def _compiles(source: str) -> tuple[bool, str]:
    try:
        compile(source, "<guest>", "exec")
        return True, ""
    except (SyntaxError, ValueError) as exc:
        return False, f"{type(exc).__name__}: {exc}"


def _stub_static(code: str, overrides: dict[str, Any]) -> dict[str, Any]:
    # Deliberately crude stand-ins; only code_length_lines is honest. The
    # real runner computes the others from the parsed syntax tree.
    lines = code.splitlines()
    static = {
        "code_length_lines": len(lines),
        "ast_node_count": max(1, len(code.split())),
        "cyclomatic": 1,
        "cognitive": 0,
    }
    static.update({k: int(v) for k, v in overrides.items() if k in static})
    return static


def _statuses(template: dict[str, Any], n_tests: int) -> list[str]:
    if "statuses" in template:
        pattern = list(template["statuses"]) or ["fail"]
        return [pattern[i % len(pattern)] for i in range(n_tests)]
    pass_count = int(template.get("pass_count", n_tests))
    return ["pass" if i < pass_count else "fail" for i in range(n_tests)]


def build_report(job: dict[str, Any], fixtures: dict[str, Any]) -> dict[str, Any]:
    mode = job["mode"]
    code = job["code"]
    tests = list(job["tests"])[: int(job["limits"]["max_tests"])]
    template = _template_for(code, fixtures)

    parses, diagnostic = _compiles(code)
    load_ok = parses and bool(template.get("load_ok", True))
    if parses and not load_ok:
        diagnostic = str(template.get("message", "load failed"))

    static = _stub_static(code, template.get("static", {})) if parses else None
    cpu_ms = float(template.get("cpu_ms", 1.0))
    wall_ms = float(template.get("wall_ms", cpu_ms))
    peak = int(template.get("peak_memory_bytes", 1 << 20))

    per_test: list[dict[str, Any]] = []
    if mode == "execute":
        if load_ok:
            statuses = _statuses(template, len(tests))
        else:
            statuses = ["error"] * len(tests)
        for i, status in enumerate(statuses):
            message = ""
            if status != "pass":
                message = diagnostic if not load_ok else str(template.get("message", f"test {i} failed"))
            per_test.append(
                {
                    "index": i,
                    "status": status,
                    "message": message,
                    "wall_ms": wall_ms,
                    "cpu_ms": cpu_ms,
                    "peak_memory_bytes": peak,
                }
            )
    elif mode == "check_only":
        load_ok = parses
        for i, test in enumerate(tests):
            ok, msg = _compiles(test)
            per_test.append(
                {
                    "index": i,
                    "status": "pass" if ok else "error",
                    "message": msg,
                    "wall_ms": 0.0,
                    "cpu_ms": 0.0,
                    "peak_memory_bytes": 0,
                }
            )
        if not parses:
            per_test = [dict(t, status="error", message=diagnostic) for t in per_test]
    elif mode == "static_only":
        load_ok = parses
    else:
        raise ValueError(f"unknown mode {mode!r}")

    return {
        "load_ok": load_ok,
        "load_message": "" if load_ok else diagnostic,
        "per_test": per_test,
        "static": static,
        "limits_enforced": False,  # the fake never applies real limits
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="orps-fake-runner", description=__doc__)
    parser.add_argument("--fixtures", default=os.environ.get(FIXTURES_ENV))
    args = parser.parse_args(argv)

    raw = sys.stdin.read()
    try:
        job = json.loads(raw)
        fixtures = _load_fixtures(args.fixtures)
        report = build_report(job, fixtures)
    except Exception as exc:  # harness fault: diagnostic document + nonzero exit
        sys.stdout.write(json.dumps({"error": f"{type(exc).__name__}: {exc}"}))
        return 1
    sys.stdout.write(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
