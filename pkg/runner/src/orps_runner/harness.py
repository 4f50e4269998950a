"""Guest execution harness.

Every test (and the initial load probe) runs in a freshly forked child with
its own CPU and address-space limits, so a crashing, hanging or allocating
guest can never poison the harness process or a later test. The parent
enforces a wall-clock grace kill one second past the CPU budget and reads a
small result document back over a pipe.
"""

from __future__ import annotations

import json
import math
import os
import resource
import signal
import sys
import tempfile
import time
import traceback
from dataclasses import dataclass
from typing import Any

from .metrics import SourceParseError, compute_static_metrics

STREAM_CAP = 4096  # bytes kept per captured stream
MESSAGE_CAP = 2048
WALL_GRACE_S = 1.0

PASS = "pass"
FAIL = "fail"
ERROR = "error"
TIMEOUT = "timeout"


@dataclass
class Limits:
    cpu_seconds: float = 5.0
    memory_bytes: int = 512 * 1024 * 1024
    max_tests: int = 15

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "Limits":
        limits = Limits(
            cpu_seconds=float(data["cpu_seconds"]),
            memory_bytes=int(data["memory_bytes"]),
            max_tests=int(data["max_tests"]),
        )
        if limits.cpu_seconds <= 0 or limits.memory_bytes <= 0 or limits.max_tests < 1:
            raise ValueError("limits must be positive")
        return limits


@dataclass
class ChildOutcome:
    status: str
    message: str
    wall_ms: float
    cpu_ms: float
    peak_memory_bytes: int
    limits_enforced: bool = True


def _apply_limits(limits: Limits) -> bool:
    """Install rlimits in the child; returns False where unsupported."""
    enforced = True
    cpu = max(1, math.ceil(limits.cpu_seconds))
    try:
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
    except (ValueError, OSError, AttributeError):
        enforced = False
    try:
        resource.setrlimit(resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes))
    except (ValueError, OSError, AttributeError):
        enforced = False
    return enforced


def _truncate(data: bytes, cap: int) -> str:
    text = data.decode("utf-8", "replace")
    if len(text) > cap:
        return text[:cap] + f"... [truncated, {len(text) - cap} more characters]"
    return text


def _child_main(
    code: str,
    test: str | None,
    limits: Limits,
    result_fd: int,
    stdout_path: str,
    stderr_path: str,
) -> None:
    """Runs in the forked child: apply limits, execute, report, _exit."""
    os.setsid()
    doc: dict[str, Any] = {"status": ERROR, "message": "", "limits_enforced": True}
    try:
        devnull = os.open(os.devnull, os.O_RDONLY)
        os.dup2(devnull, 0)
        out_fd = os.open(stdout_path, os.O_WRONLY | os.O_TRUNC)
        err_fd = os.open(stderr_path, os.O_WRONLY | os.O_TRUNC)
        os.dup2(out_fd, 1)
        os.dup2(err_fd, 2)
        doc["limits_enforced"] = _apply_limits(limits)

        namespace: dict[str, Any] = {"__name__": "__main__"}
        try:
            exec(compile(code, "<guest>", "exec"), namespace)
            if test is None:
                doc["status"] = PASS
            else:
                exec(compile(test, "<test>", "exec"), namespace)
                doc["status"] = PASS
        except AssertionError as exc:
            doc["status"] = FAIL
            doc["message"] = f"AssertionError: {exc}"[:MESSAGE_CAP]
        except MemoryError:
            doc["status"] = ERROR
            doc["message"] = "MemoryError: guest exceeded the memory limit"
        except BaseException as exc:  # noqa: BLE001 - guest code can raise anything
            tail = traceback.format_exc(limit=3)
            doc["status"] = ERROR
            doc["message"] = f"{type(exc).__name__}: {exc}\n{tail}"[:MESSAGE_CAP]
    except BaseException as exc:  # harness-side problem inside the child
        doc["status"] = ERROR
        doc["message"] = f"child harness fault: {type(exc).__name__}: {exc}"[:MESSAGE_CAP]
    finally:
        try:
            sys.stdout.flush()
            sys.stderr.flush()
        except Exception:
            pass
        try:
            os.write(result_fd, json.dumps(doc).encode("utf-8"))
            os.close(result_fd)
        except Exception:
            pass
        os._exit(0)


def run_isolated(code: str, test: str | None, limits: Limits) -> ChildOutcome:
    """Fork, execute the guest (plus one optional test), and classify."""
    read_fd, write_fd = os.pipe()
    with tempfile.NamedTemporaryFile(delete=False) as out_file, tempfile.NamedTemporaryFile(
        delete=False
    ) as err_file:
        stdout_path, stderr_path = out_file.name, err_file.name

    started = time.monotonic()
    pid = os.fork()
    if pid == 0:
        os.close(read_fd)
        _child_main(code, test, limits, write_fd, stdout_path, stderr_path)
        os._exit(1)  # unreachable

    os.close(write_fd)
    deadline = started + limits.cpu_seconds + WALL_GRACE_S
    killed_on_deadline = False
    status = rusage = None
    while True:
        wpid, wstatus, ru = os.wait4(pid, os.WNOHANG)
        if wpid == pid:
            status, rusage = wstatus, ru
            break
        if time.monotonic() >= deadline and not killed_on_deadline:
            killed_on_deadline = True
            _kill_group(pid)
        time.sleep(0.005)
    wall_ms = (time.monotonic() - started) * 1000.0
    _kill_group(pid)  # reap any grandchildren the guest left behind

    chunks = []
    while True:
        chunk = os.read(read_fd, 65536)
        if not chunk:
            break
        chunks.append(chunk)
    os.close(read_fd)

    stdout_tail = _read_and_unlink(stdout_path)
    stderr_tail = _read_and_unlink(stderr_path)

    cpu_ms = 0.0
    peak = 0
    if rusage is not None:
        cpu_ms = (rusage.ru_utime + rusage.ru_stime) * 1000.0
        peak = int(rusage.ru_maxrss) * 1024  # ru_maxrss is KiB on Linux

    doc = None
    if chunks:
        try:
            doc = json.loads(b"".join(chunks).decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            doc = None

    if doc is not None and not killed_on_deadline:
        outcome_status = doc.get("status", ERROR)
        message = doc.get("message", "")
        enforced = bool(doc.get("limits_enforced", True))
    elif killed_on_deadline:
        outcome_status = TIMEOUT
        message = (
            f"wall-clock kill {limits.cpu_seconds + WALL_GRACE_S:.1f}s after start "
            f"(cpu budget {limits.cpu_seconds:.1f}s)"
        )
        enforced = True
    else:
        outcome_status, message, enforced = _classify_wait_status(status, limits)

    extras = []
    if stdout_tail.strip():
        extras.append(f"--- stdout ---\n{stdout_tail}")
    if stderr_tail.strip() and outcome_status != PASS:
        extras.append(f"--- stderr ---\n{stderr_tail}")
    if extras and outcome_status != PASS:
        message = "\n".join([message] + extras) if message else "\n".join(extras)

    return ChildOutcome(
        status=outcome_status,
        message=message,
        wall_ms=wall_ms,
        cpu_ms=cpu_ms,
        peak_memory_bytes=peak,
        limits_enforced=enforced,
    )


def _classify_wait_status(status: int, limits: Limits) -> tuple[str, str, bool]:
    if status is None:
        return ERROR, "child vanished without a status", True
    if os.WIFSIGNALED(status):
        sig = os.WTERMSIG(status)
        if sig in (signal.SIGXCPU, signal.SIGKILL):
            return (
                TIMEOUT,
                f"cpu time limit of {limits.cpu_seconds:.1f}s exceeded (signal {sig})",
                True,
            )
        return ERROR, f"child killed by signal {sig}", True
    code = os.WEXITSTATUS(status)
    return ERROR, f"child exited with status {code} before reporting", True


def _kill_group(pid: int) -> None:
    try:
        os.killpg(pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _read_and_unlink(path: str) -> str:
    try:
        with open(path, "rb") as fh:
            data = fh.read(STREAM_CAP + 4096)
    except OSError:
        data = b""
    finally:
        try:
            os.unlink(path)
        except OSError:
            pass
    return _truncate(data, STREAM_CAP)


# ---------------------------------------------------------------------------
# Job-level driver


def _static_block(code: str):
    try:
        return compute_static_metrics(code).to_dict(), ""
    except SourceParseError as exc:
        return None, str(exc)


def _empty_test_row(index: int, status: str, message: str) -> dict[str, Any]:
    return {
        "index": index,
        "status": status,
        "message": message[: MESSAGE_CAP + 2 * STREAM_CAP],
        "wall_ms": 0.0,
        "cpu_ms": 0.0,
        "peak_memory_bytes": 0,
    }


def run_job(job: dict[str, Any]) -> dict[str, Any]:
    mode = job["mode"]
    code = job["code"]
    limits = Limits.from_dict(job["limits"])
    tests = [str(t) for t in job["tests"]][: limits.max_tests]

    if mode not in ("execute", "static_only", "check_only"):
        raise ValueError(f"unknown mode {mode!r}")

    static, parse_diagnostic = _static_block(code)

    if mode == "static_only":
        return {
            "load_ok": static is not None,
            "load_message": parse_diagnostic,
            "per_test": [],
            "static": static,
            "limits_enforced": True,
        }

    if mode == "check_only":
        per_test = []
        for i, test in enumerate(tests):
            try:
                compile(test, f"<test {i}>", "exec")
                per_test.append(_empty_test_row(i, PASS, ""))
            except (SyntaxError, ValueError) as exc:
                per_test.append(_empty_test_row(i, ERROR, f"{type(exc).__name__}: {exc}"))
        if static is None:
            per_test = [_empty_test_row(t["index"], ERROR, parse_diagnostic) for t in per_test]
        return {
            "load_ok": static is not None,
            "load_message": parse_diagnostic,
            "per_test": per_test,
            "static": static,
            "limits_enforced": True,
        }

    # execute mode: a load probe first, then one fresh process per test.
    limits_enforced = True
    if static is None:
        load_ok = False
        load_message = parse_diagnostic
    else:
        probe = run_isolated(code, None, limits)
        limits_enforced = probe.limits_enforced
        load_ok = probe.status == PASS
        load_message = "" if load_ok else probe.message

    per_test = []
    if load_ok:
        for i, test in enumerate(tests):
            outcome = run_isolated(code, test, limits)
            limits_enforced = limits_enforced and outcome.limits_enforced
            per_test.append(
                {
                    "index": i,
                    "status": outcome.status,
                    "message": outcome.message[: MESSAGE_CAP + 2 * STREAM_CAP],
                    "wall_ms": outcome.wall_ms,
                    "cpu_ms": outcome.cpu_ms,
                    "peak_memory_bytes": outcome.peak_memory_bytes,
                }
            )
    else:
        per_test = [_empty_test_row(i, ERROR, load_message) for i in range(len(tests))]

    return {
        "load_ok": load_ok,
        "load_message": load_message,
        "per_test": per_test,
        "static": static,
        "limits_enforced": limits_enforced,
    }
