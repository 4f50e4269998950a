"""Sandbox runner: executes one guest program against test cases in isolated
child processes under CPU and memory limits, computes static source metrics
with the native parser, and speaks a one-shot JSON document protocol over
stdin/stdout."""

import sys

from .metrics import SourceParseError, StaticMetrics, compute_static_metrics

__version__ = "0.1.0"


def runner_command() -> list[str]:
    """Argv with which a host should spawn this runner."""
    return [sys.executable, "-m", "orps_runner"]


__all__ = [
    "SourceParseError",
    "StaticMetrics",
    "compute_static_metrics",
    "runner_command",
    "__version__",
]
