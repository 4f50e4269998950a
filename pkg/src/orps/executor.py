"""Host-side execution service.

Drives guest-runner processes over the stdin/stdout protocol, attaches
hardware counters for profiling, and normalizes results into
:class:`ExecutionReport` values. Guest failures of any kind are data; only
infrastructure problems raise :class:`ExecutorFault`.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .config import ResourceLimits
from .errors import DegenerateReference, ExecutorFault, IncomparableProfiles
from .perf import PerfSession, PerfUnavailable
from .runner_protocol import (
    PASS,
    PerTest,
    RunnerJob,
    RunnerReport,
    StaticMetrics,
    decode_report,
)

log = logging.getLogger(__name__)

# Profiling measurements must never overlap; counter noise under contention
# would corrupt relative-time comparisons.
_PROFILE_LOCK = threading.Lock()

FEEDBACK_CHAR_LIMIT = 2000
_MAX_FAILURES_SHOWN = 3


@dataclass(frozen=True)
class PerfProfile:
    """One measured workload. ``counters_available`` decides which fields
    are meaningful: with counters, time_enabled_ns/instructions/branch_misses
    are set; without, only wall_ns and page_faults are."""

    counters_available: bool
    time_enabled_ns: int | None = None
    instructions: int | None = None
    branch_misses: int | None = None
    page_faults: int = 0
    wall_ns: int = 0

    def time_basis_ns(self) -> int:
        if self.counters_available:
            return int(self.time_enabled_ns or 0)
        return int(self.wall_ns)

    def to_dict(self) -> dict[str, Any]:
        return {
            "counters_available": self.counters_available,
            "time_enabled_ns": self.time_enabled_ns,
            "instructions": self.instructions,
            "branch_misses": self.branch_misses,
            "page_faults": self.page_faults,
            "wall_ns": self.wall_ns,
        }


@dataclass(frozen=True)
class ExecutionReport:
    valid: bool
    tests_total: int
    tests_passed: int
    per_test: list[PerTest] = field(default_factory=list)
    static: StaticMetrics | None = None
    profile: PerfProfile | None = None
    feedback_text: str = ""
    load_message: str = ""
    truncated_tests: int = 0

    @property
    def pass_fraction(self) -> float:
        if self.tests_total == 0:
            return 0.0
        return self.tests_passed / self.tests_total

    @property
    def all_passed(self) -> bool:
        return self.valid and self.tests_total > 0 and self.tests_passed == self.tests_total

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "tests_total": self.tests_total,
            "tests_passed": self.tests_passed,
            "per_test": [
                {
                    "index": t.index,
                    "status": t.status,
                    "message": t.message,
                    "wall_ms": t.wall_ms,
                    "cpu_ms": t.cpu_ms,
                    "peak_memory_bytes": t.peak_memory_bytes,
                }
                for t in self.per_test
            ],
            "static": None
            if self.static is None
            else {
                "code_length_lines": self.static.code_length_lines,
                "ast_node_count": self.static.ast_node_count,
                "cyclomatic": self.static.cyclomatic,
                "cognitive": self.static.cognitive,
            },
            "profile": None if self.profile is None else self.profile.to_dict(),
            "feedback_text": self.feedback_text,
            "load_message": self.load_message,
            "truncated_tests": self.truncated_tests,
        }


def relative_time(candidate: PerfProfile, reference: PerfProfile) -> float:
    """Candidate time as a percentage of the reference (100 = parity)."""
    if candidate.counters_available != reference.counters_available:
        raise IncomparableProfiles(
            "candidate and reference profiles use different measurement bases"
        )
    ref = reference.time_basis_ns()
    if ref == 0:
        raise DegenerateReference("reference profile has zero time")
    return 100.0 * candidate.time_basis_ns() / ref


def format_feedback(report: ExecutionReport, reference: PerfProfile | None = None) -> str:
    """Deterministic feedback text for the reasoning chain, capped at 2000 chars."""
    lines: list[str] = []
    if not report.valid:
        lines.append("Execution: program failed to load.")
        if report.load_message:
            lines.append(f"Load error: {report.load_message[:300]}")
    elif report.tests_total == 0:
        lines.append("Execution: program loaded; no tests were run.")
    elif report.all_passed:
        lines.append(f"Execution: all tests passed ({report.tests_passed}/{report.tests_total}).")
    else:
        lines.append(
            f"Execution: {report.tests_passed}/{report.tests_total} tests passed."
        )

    failures = [t for t in report.per_test if t.status != PASS]
    if report.valid and failures:
        lines.append("Failing tests:")
        for t in failures[:_MAX_FAILURES_SHOWN]:
            msg = " ".join(t.message.split())[:200]
            lines.append(f"  - test {t.index} [{t.status}] {msg}".rstrip())
        extra = len(failures) - _MAX_FAILURES_SHOWN
        if extra > 0:
            lines.append(f"  (+{extra} more failing tests)")

    if report.truncated_tests:
        lines.append(
            f"Note: {report.truncated_tests} supplied tests were not run (limit)."
        )

    if report.static is not None:
        s = report.static
        lines.append(
            "Static metrics: "
            f"{s.code_length_lines} lines, {s.ast_node_count} AST nodes, "
            f"cyclomatic {s.cyclomatic}, cognitive {s.cognitive}."
        )

    if report.profile is not None:
        p = report.profile
        if p.counters_available:
            lines.append(
                "Profile: "
                f"{p.instructions} instructions, {p.branch_misses} branch misses, "
                f"{p.page_faults} page faults, time enabled {p.time_enabled_ns} ns."
            )
        else:
            lines.append(
                f"Profile: wall time {p.wall_ns} ns, {p.page_faults} page faults "
                "(hardware counters unavailable)."
            )
        if reference is not None:
            try:
                pct = relative_time(p, reference)
            except (IncomparableProfiles, DegenerateReference):
                pct = None
            if pct is not None:
                lines.append(
                    f"Relative time vs reference: {pct:.1f}% (100 = parity, lower is better)."
                )

    return "\n".join(lines)[:FEEDBACK_CHAR_LIMIT]


@dataclass
class _ChildResult:
    exit_code: int
    stdout: bytes
    stderr: bytes
    wall_ns: int
    page_faults: int
    reading: Any = None  # CounterReading | None


def default_runner_cmd() -> list[str]:
    """Fall back to the fake runner when no runner command is configured.

    Spawned by file path rather than ``-m orps.fake_runner`` so each child
    skips the package import (the module itself is dependency-free).
    """
    return [sys.executable, str(Path(__file__).with_name("fake_runner.py"))]


class ExecutionService:
    """Spawns runner processes and maps their reports.

    ``timing_source`` selects how profiles are measured:

    - ``"auto"``: hardware counters when permitted, wall clock otherwise.
    - ``"wall"``: never attempt counters.
    - ``"report"``: synthesize the profile from the runner-reported per-test
      cpu_ms. Deterministic; used for scripted/mock runs with the fake runner.
    """

    def __init__(
        self,
        runner_cmd: Sequence[str] | None = None,
        limits: ResourceLimits | None = None,
        timing_source: str = "auto",
        profile_repetitions: int = 3,
        record_profile_spans: bool = False,
        clock: Callable[[], int] = time.monotonic_ns,
    ):
        self.runner_cmd = list(runner_cmd) if runner_cmd else default_runner_cmd()
        self.limits = limits or ResourceLimits()
        if timing_source not in ("auto", "wall", "report"):
            raise ValueError(f"unknown timing_source {timing_source!r}")
        self.timing_source = timing_source
        self.profile_repetitions = max(1, profile_repetitions)
        self.record_profile_spans = record_profile_spans
        self.profile_spans: list[tuple[int, int]] = []
        self._clock = clock

    # -- low-level child management -------------------------------------

    def _outer_timeout(self, n_tests: int) -> float:
        per_test = self.limits.cpu_seconds + 2.0
        return 30.0 + per_test * (n_tests + 2)

    def _run_child(self, payload: bytes, n_tests: int, attach_counters: bool) -> _ChildResult:
        try:
            proc = subprocess.Popen(
                self.runner_cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
            )
        except (FileNotFoundError, PermissionError) as exc:
            raise ExecutorFault(f"cannot launch runner {self.runner_cmd}: {exc}")

        # Counters are inherited by everything the runner forks from here on.
        # The runner cannot start any guest work until the job document
        # arrives on stdin, which is only written below, so attaching now
        # covers the entire guest workload.
        session = None
        if attach_counters:
            try:
                session = PerfSession(proc.pid)
            except PerfUnavailable as exc:
                log.debug("hardware counters unavailable: %s", exc)
        t0 = time.monotonic_ns()

        buffers = {"out": bytearray(), "err": bytearray()}

        def pump(stream, key):
            for chunk in iter(lambda: stream.read(65536), b""):
                buffers[key] += chunk
            stream.close()

        readers = [
            threading.Thread(target=pump, args=(proc.stdout, "out"), daemon=True),
            threading.Thread(target=pump, args=(proc.stderr, "err"), daemon=True),
        ]
        for t in readers:
            t.start()
        try:
            proc.stdin.write(payload)
            proc.stdin.close()
        except BrokenPipeError:
            pass

        deadline = time.monotonic() + self._outer_timeout(n_tests)
        status = None
        rusage = None
        killed = False
        while True:
            wpid, wstatus, ru = os.wait4(proc.pid, os.WNOHANG)
            if wpid == proc.pid:
                status, rusage = wstatus, ru
                break
            if time.monotonic() > deadline:
                if not killed:
                    try:
                        os.killpg(proc.pid, signal.SIGKILL)
                    except ProcessLookupError:
                        pass
                    killed = True
                    deadline = time.monotonic() + 10.0
                else:
                    raise ExecutorFault("runner process refused to die after SIGKILL")
            time.sleep(0.005)
        wall_ns = time.monotonic_ns() - t0
        for t in readers:
            t.join(timeout=5.0)
        proc.returncode = os.waitstatus_to_exitcode(status)

        reading = None
        if session is not None:
            try:
                reading = session.read()
            except PerfUnavailable:
                reading = None
            finally:
                session.close()

        if killed:
            raise ExecutorFault(
                f"runner exceeded the infrastructure timeout ({self._outer_timeout(n_tests):.0f}s)"
            )
        page_faults = 0
        if rusage is not None:
            page_faults = int(rusage.ru_minflt + rusage.ru_majflt)
        return _ChildResult(
            exit_code=proc.returncode,
            stdout=bytes(buffers["out"]),
            stderr=bytes(buffers["err"]),
            wall_ns=wall_ns,
            page_faults=page_faults,
            reading=reading,
        )

    def run_job(self, job: RunnerJob, attach_counters: bool = False) -> tuple[RunnerReport, _ChildResult]:
        payload = json.dumps(job.to_dict()).encode("utf-8")
        child = self._run_child(payload, len(job.tests), attach_counters)
        if child.exit_code != 0:
            tail = child.stderr.decode("utf-8", "replace")[-500:]
            doc = child.stdout.decode("utf-8", "replace")[-500:]
            raise ExecutorFault(
                f"runner harness fault (exit {child.exit_code}): {doc or tail}"
            )
        report = decode_report(child.stdout.decode("utf-8"))
        return report, child

    # -- public operations ------------------------------------------------

    def check_tests(self, code: str, tests: Sequence[str], limits: ResourceLimits | None = None) -> RunnerReport:
        """Syntax-check tests against code without executing test bodies."""
        lim = limits or self.limits
        job = RunnerJob(mode="check_only", code=code, tests=list(tests)[: lim.max_tests], limits=lim)
        report, _ = self.run_job(job)
        return report

    def execute_candidate(
        self,
        code: str,
        tests: Sequence[str],
        limits: ResourceLimits | None = None,
        reference: PerfProfile | None = None,
    ) -> ExecutionReport:
        lim = limits or self.limits
        supplied = list(tests)
        truncated = 0
        if len(supplied) > lim.max_tests:
            truncated = len(supplied) - lim.max_tests
            log.warning("truncating %d tests beyond the %d-test limit", truncated, lim.max_tests)
            supplied = supplied[: lim.max_tests]

        job = RunnerJob(mode="execute", code=code, tests=supplied, limits=lim)
        runner_report, _ = self.run_job(job)
        report = self._map_report(runner_report, len(supplied), truncated)
        return replace(report, feedback_text=format_feedback(report, reference))

    def _map_report(self, rep: RunnerReport, tests_total: int, truncated: int) -> ExecutionReport:
        passed = sum(1 for t in rep.per_test if t.status == PASS)
        return ExecutionReport(
            valid=rep.load_ok,
            tests_total=tests_total,
            tests_passed=passed if rep.load_ok else 0,
            per_test=list(rep.per_test),
            static=rep.static,
            profile=None,
            load_message=rep.load_message,
            truncated_tests=truncated,
        )

    def profile_candidate(
        self,
        code: str,
        tests: Sequence[str],
        limits: ResourceLimits | None = None,
    ) -> PerfProfile:
        """Measure the workload; callers normally pass the tests that passed.

        Repeats the measurement and takes the per-field median; runs are
        serialized globally so measurements never overlap.
        """
        lim = limits or self.limits
        job = RunnerJob(mode="execute", code=code, tests=list(tests)[: lim.max_tests], limits=lim)
        # Report-derived timing is deterministic, so repeating it is pure cost.
        repetitions = 1 if self.timing_source == "report" else self.profile_repetitions
        with _PROFILE_LOCK:
            start = self._clock()
            samples = [self._profile_once(job) for _ in range(repetitions)]
            end = self._clock()
        if self.record_profile_spans:
            self.profile_spans.append((start, end))
        return _median_profile(samples)

    def _profile_once(self, job: RunnerJob) -> PerfProfile:
        if self.timing_source == "report":
            report, child = self.run_job(job)
            cpu_ns = int(sum(t.cpu_ms for t in report.per_test) * 1e6)
            return PerfProfile(
                counters_available=False,
                page_faults=0,
                wall_ns=cpu_ns,
            )
        attach = self.timing_source == "auto"
        report, child = self.run_job(job, attach_counters=attach)
        if child.reading is not None:
            r = child.reading
            return PerfProfile(
                counters_available=True,
                time_enabled_ns=r.time_enabled_ns,
                instructions=r.instructions,
                branch_misses=r.branch_misses,
                page_faults=r.page_faults,
                wall_ns=child.wall_ns,
            )
        return PerfProfile(
            counters_available=False,
            page_faults=child.page_faults,
            wall_ns=child.wall_ns,
        )


def _median_int(values: list[int]) -> int:
    ordered = sorted(values)
    return ordered[len(ordered) // 2]


def _median_profile(samples: list[PerfProfile]) -> PerfProfile:
    if len(samples) == 1:
        return samples[0]
    available = all(s.counters_available for s in samples)
    if available:
        return PerfProfile(
            counters_available=True,
            time_enabled_ns=_median_int([int(s.time_enabled_ns or 0) for s in samples]),
            instructions=_median_int([int(s.instructions or 0) for s in samples]),
            branch_misses=_median_int([int(s.branch_misses or 0) for s in samples]),
            page_faults=_median_int([s.page_faults for s in samples]),
            wall_ns=_median_int([s.wall_ns for s in samples]),
        )
    return PerfProfile(
        counters_available=False,
        page_faults=_median_int([s.page_faults for s in samples]),
        wall_ns=_median_int([s.wall_ns for s in samples]),
    )
