"""Protocol entry point: one JSON job on stdin, one JSON report on stdout.

A nonzero exit status always means a harness fault (malformed job, internal
crash); guest-program failures are encoded inside the report.
"""

from __future__ import annotations

import json
import sys

from .harness import run_job


def main() -> int:
    raw = sys.stdin.read()
    try:
        job = json.loads(raw)
        report = run_job(job)
    except Exception as exc:  # harness fault: diagnostic document, nonzero exit
        sys.stdout.write(json.dumps({"error": f"{type(exc).__name__}: {exc}"}))
        return 1
    sys.stdout.write(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
