"""Problem-set ingestion: JSONL records plus importers for the common
function-synthesis benchmark layouts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import DatasetError


@dataclass(frozen=True)
class ProblemRecord:
    id: str
    prompt: str
    visible_tests: list[str] = field(default_factory=list)
    hidden_tests: list[str] = field(default_factory=list)
    reference_solution: str | None = None
    entry_point: str | None = None
    tags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "visible_tests": list(self.visible_tests),
            "hidden_tests": list(self.hidden_tests),
            "reference_solution": self.reference_solution,
            "entry_point": self.entry_point,
            "tags": list(self.tags),
        }


def _record_from_dict(data: dict[str, Any], line_no: int) -> ProblemRecord:
    try:
        return ProblemRecord(
            id=str(data["id"]),
            prompt=str(data["prompt"]),
            visible_tests=[str(t) for t in data.get("visible_tests", [])],
            hidden_tests=[str(t) for t in data.get("hidden_tests", [])],
            reference_solution=data.get("reference_solution"),
            entry_point=data.get("entry_point"),
            tags=[str(t) for t in data.get("tags", [])],
        )
    except KeyError as exc:
        raise DatasetError(f"line {line_no}: missing field {exc}")


def load_problems(path: str | Path) -> list[ProblemRecord]:
    """Read one ProblemRecord per JSONL line."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset not found: {path}")
    problems = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON: {exc}")
            record = _record_from_dict(data, line_no)
            if record.id in seen:
                raise DatasetError(f"line {line_no}: duplicate problem id {record.id!r}")
            seen.add(record.id)
            problems.append(record)
    if not problems:
        raise DatasetError(f"dataset is empty: {path}")
    return problems


def save_problems(problems: Iterable[ProblemRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for problem in problems:
            fh.write(json.dumps(problem.to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Importers for third-party benchmark layouts


def _import_humaneval(data: dict[str, Any]) -> ProblemRecord:
    # Records carry a check() function in `test`; run it against the entry
    # point as a single hidden test.
    entry = data.get("entry_point")
    test_src = data.get("test", "")
    hidden = []
    if test_src:
        hidden.append(f"{test_src}\n\ncheck({entry})" if entry else test_src)
    reference = None
    if data.get("canonical_solution"):
        reference = data.get("prompt", "") + data["canonical_solution"]
    return ProblemRecord(
        id=str(data.get("task_id", data.get("id", ""))),
        prompt=data.get("prompt", ""),
        hidden_tests=hidden,
        reference_solution=reference,
        entry_point=entry,
    )


def _import_mbpp(data: dict[str, Any]) -> ProblemRecord:
    setup = data.get("test_setup_code") or ""
    tests = []
    for t in data.get("test_list", []) or []:
        tests.append(f"{setup}\n{t}".strip() if setup else t)
    return ProblemRecord(
        id=str(data.get("task_id", data.get("id", ""))),
        prompt=data.get("text") or data.get("prompt", ""),
        hidden_tests=tests,
        reference_solution=data.get("code"),
        tags=[str(t) for t in data.get("tags", [])],
    )


def _import_generic(data: dict[str, Any]) -> ProblemRecord:
    # Competitive-programming style records: instruction + completion +
    # either a test list or a single test file.
    tests = data.get("test_list")
    if not tests and data.get("test_file"):
        tests = [data["test_file"]]
    if not tests and data.get("test"):
        tests = [data["test"]]
    return ProblemRecord(
        id=str(data.get("task_id", data.get("id", ""))),
        prompt=data.get("instruction") or data.get("prompt") or data.get("text", ""),
        hidden_tests=[str(t) for t in tests or []],
        reference_solution=data.get("completion") or data.get("code"),
        tags=[str(t) for t in data.get("tags", data.get("categories", []) or [])],
    )


_IMPORTERS = {
    "humaneval": _import_humaneval,
    "mbpp": _import_mbpp,
    "generic": _import_generic,
}

IMPORT_FORMATS = tuple(sorted(_IMPORTERS))


def import_problems(path: str | Path, fmt: str) -> list[ProblemRecord]:
    """Convert a third-party JSONL benchmark file into ProblemRecords."""
    if fmt not in _IMPORTERS:
        raise DatasetError(f"unknown import format {fmt!r}; choose from {IMPORT_FORMATS}")
    importer = _IMPORTERS[fmt]
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"input not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON: {exc}")
            record = importer(data)
            if not record.id or not record.prompt:
                raise DatasetError(f"line {line_no}: record needs an id and a prompt")
            records.append(record)
    if not records:
        raise DatasetError(f"no records imported from {path}")
    return records
