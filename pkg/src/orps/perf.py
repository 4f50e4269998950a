"""Hardware performance counters via the Linux perf_event_open syscall.

Counters are attached to an already-spawned (stopped) process with
``inherit`` set, so everything the process forks afterwards is measured too.
On kernels or sandboxes that refuse the syscall, :class:`PerfUnavailable` is
raised and callers fall back to wall-clock measurement.
"""

from __future__ import annotations

import ctypes
import errno
import os
import platform
import struct
from dataclasses import dataclass

_SYSCALL_NR = {
    "x86_64": 298,
    "aarch64": 241,
    "arm64": 241,
}

_PERF_TYPE_HARDWARE = 0
_PERF_TYPE_SOFTWARE = 1
_PERF_COUNT_HW_INSTRUCTIONS = 1
_PERF_COUNT_HW_BRANCH_MISSES = 5
_PERF_COUNT_SW_PAGE_FAULTS = 2

_PERF_FORMAT_TOTAL_TIME_ENABLED = 1 << 0
_PERF_FORMAT_TOTAL_TIME_RUNNING = 1 << 1

_FLAG_INHERIT = 1 << 1

_ATTR_SIZE_VER0 = 64


class PerfUnavailable(OSError):
    """perf_event_open is not permitted or not supported here."""


def _pack_attr(event_type: int, config: int) -> bytes:
    # struct perf_event_attr, version 0 layout (64 bytes):
    # u32 type, u32 size, u64 config, u64 sample_period, u64 sample_type,
    # u64 read_format, u64 flags, u32 wakeup_events, u32 bp_type, u64 bp_addr
    read_format = _PERF_FORMAT_TOTAL_TIME_ENABLED | _PERF_FORMAT_TOTAL_TIME_RUNNING
    return struct.pack(
        "=IIQQQQQIIQ",
        event_type,
        _ATTR_SIZE_VER0,
        config,
        0,
        0,
        read_format,
        _FLAG_INHERIT,
        0,
        0,
        0,
    )


def _perf_event_open(attr: bytes, pid: int) -> int:
    machine = platform.machine()
    nr = _SYSCALL_NR.get(machine)
    if nr is None:
        raise PerfUnavailable(f"no perf_event_open syscall number for {machine}")
    libc = ctypes.CDLL(None, use_errno=True)
    buf = ctypes.create_string_buffer(attr, len(attr))
    fd = libc.syscall(
        ctypes.c_long(nr),
        ctypes.c_void_p(ctypes.addressof(buf)),
        ctypes.c_int(pid),
        ctypes.c_int(-1),  # any cpu
        ctypes.c_int(-1),  # no group: inherit and grouped reads conflict
        ctypes.c_ulong(0),
    )
    if fd < 0:
        err = ctypes.get_errno()
        raise PerfUnavailable(err, f"perf_event_open failed: {os.strerror(err)}")
    return fd


@dataclass(frozen=True)
class CounterReading:
    instructions: int
    branch_misses: int
    page_faults: int
    time_enabled_ns: int


class PerfSession:
    """Three independent counters (instructions, branch misses, page faults)
    attached to one process tree. Read after the tree has fully exited so the
    kernel has folded child counts back into the parent events."""

    _EVENTS = (
        ("instructions", _PERF_TYPE_HARDWARE, _PERF_COUNT_HW_INSTRUCTIONS),
        ("branch_misses", _PERF_TYPE_HARDWARE, _PERF_COUNT_HW_BRANCH_MISSES),
        ("page_faults", _PERF_TYPE_SOFTWARE, _PERF_COUNT_SW_PAGE_FAULTS),
    )

    def __init__(self, pid: int):
        self._fds: dict[str, int] = {}
        try:
            for name, etype, config in self._EVENTS:
                self._fds[name] = _perf_event_open(_pack_attr(etype, config), pid)
        except PerfUnavailable:
            self.close()
            raise

    def read(self) -> CounterReading:
        values: dict[str, int] = {}
        time_enabled = 0
        for name, fd in self._fds.items():
            raw = os.read(fd, 24)
            if len(raw) != 24:
                raise PerfUnavailable(errno.EIO, "short perf counter read")
            value, enabled, running = struct.unpack("=QQQ", raw)
            if running and running < enabled:
                value = int(value * enabled / running)
            values[name] = value
            if name == "instructions":
                time_enabled = enabled
        return CounterReading(
            instructions=values.get("instructions", 0),
            branch_misses=values.get("branch_misses", 0),
            page_faults=values.get("page_faults", 0),
            time_enabled_ns=time_enabled,
        )

    def close(self) -> None:
        for fd in self._fds.values():
            try:
                os.close(fd)
            except OSError:
                pass
        self._fds = {}

    def __enter__(self) -> "PerfSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_probe_result: bool | None = None


def counters_available() -> bool:
    """Probe once whether this process may open counters on itself."""
    global _probe_result
    if _probe_result is None:
        try:
            PerfSession(os.getpid()).close()
            _probe_result = True
        except PerfUnavailable:
            _probe_result = False
    return _probe_result
