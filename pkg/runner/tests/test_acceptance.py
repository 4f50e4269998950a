"""Acceptance criteria owned by the sandbox runner: resource enforcement at
the documented limits (5 s CPU / 512 MiB) and the hand-counted static-metric
fixtures. A summary hook prints one line per criterion."""

from __future__ import annotations

import time

from orps_runner.metrics import compute_static_metrics

from conftest import make_job, run_report
from test_metrics import BRANCHLESS, HAND_COUNTED


def test_criterion_07_sandbox_enforcement():
    # Infinite-loop guest: killed with status timeout in <= 6 s wall under
    # the default 5 s CPU budget.
    started = time.monotonic()
    report = run_report(make_job("x = 1\n", ["while True:\n    pass"]), timeout=30)
    entry = report["per_test"][0]
    assert entry["status"] == "timeout"
    assert entry["wall_ms"] <= 6000
    assert time.monotonic() - started < 10

    # A 1 GiB allocation under the 512 MiB limit: status error with a
    # memory-failure message.
    report = run_report(make_job("x = 1\n", ["buf = bytearray(1 << 30)"]))
    entry = report["per_test"][0]
    assert entry["status"] == "error"
    assert "MemoryError" in entry["message"]


def test_criterion_08_static_metric_fixtures():
    assert len(HAND_COUNTED) == 12
    for source, lines, cyclomatic, cognitive in HAND_COUNTED:
        metrics = compute_static_metrics(source)
        assert metrics.code_length_lines == lines
        assert metrics.cyclomatic == cyclomatic
        assert metrics.cognitive == cognitive
    assert compute_static_metrics(BRANCHLESS).cyclomatic == 1
