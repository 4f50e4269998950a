from __future__ import annotations

import os
import struct

import pytest

from orps.perf import (
    PerfSession,
    PerfUnavailable,
    _pack_attr,
    counters_available,
)


def test_attr_struct_is_version0_layout():
    attr = _pack_attr(0, 1)
    assert len(attr) == 64
    event_type, size = struct.unpack_from("=II", attr)
    assert event_type == 0
    assert size == 64


def test_probe_is_boolean_and_stable():
    first = counters_available()
    assert isinstance(first, bool)
    assert counters_available() == first


def test_session_raises_or_reads_consistently():
    try:
        session = PerfSession(os.getpid())
    except PerfUnavailable:
        assert counters_available() is False
        return
    with session:
        reading = session.read()
    assert reading.instructions >= 0
    assert reading.time_enabled_ns >= 0


def test_session_on_bogus_pid_raises():
    with pytest.raises(PerfUnavailable):
        # pid -2 is never a valid attach target for counters; on sandboxes
        # without perf support the syscall is refused outright.
        PerfSession(-2)
