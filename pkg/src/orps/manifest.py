"""Run-directory layout, manifest bookkeeping and the exclusivity lock."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, DatasetError
from .util import canonical_json, safe_name, sha256_file

PENDING = "pending"
RUNNING = "running"
DONE = "done"
FAILED = "failed"


@dataclass
class RunManifest:
    run_id: str
    method: str
    dataset_digest: str
    config_snapshot: dict[str, Any]
    problems: dict[str, str] = field(default_factory=dict)
    created_at: float = 0.0
    updated_at: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "method": self.method,
            "dataset_digest": self.dataset_digest,
            "config_snapshot": self.config_snapshot,
            "problems": dict(sorted(self.problems.items())),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "RunManifest":
        return RunManifest(
            run_id=data["run_id"],
            method=data["method"],
            dataset_digest=data["dataset_digest"],
            config_snapshot=data.get("config_snapshot", {}),
            problems=dict(data.get("problems", {})),
            created_at=data.get("created_at", 0.0),
            updated_at=data.get("updated_at", 0.0),
        )


class RunLayout:
    """Paths and persisted state inside one run directory."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / "manifest.json"

    def problem_dir(self, problem_id: str) -> Path:
        return self.run_dir / f"problem_{safe_name(problem_id)}"

    def outcome_path(self, problem_id: str) -> Path:
        return self.problem_dir(problem_id) / "outcome.json"

    def tests_path(self, problem_id: str) -> Path:
        return self.problem_dir(problem_id) / "tests.json"

    # -- manifest ----------------------------------------------------------

    def load_manifest(self) -> RunManifest:
        if not self.manifest_path.is_file():
            raise DatasetError(f"no manifest in {self.run_dir}")
        try:
            return RunManifest.from_dict(
                json.loads(self.manifest_path.read_text(encoding="utf-8"))
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise DatasetError(f"corrupt manifest in {self.run_dir}: {exc}")

    def save_manifest(self, manifest: RunManifest) -> None:
        manifest.updated_at = time.time()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(
            canonical_json(manifest.to_dict()), encoding="utf-8"
        )

    def create_manifest(
        self,
        run_id: str,
        method: str,
        dataset_path: str | Path,
        config_snapshot: dict[str, Any],
        problem_ids: list[str],
    ) -> RunManifest:
        manifest = RunManifest(
            run_id=run_id,
            method=method,
            dataset_digest=sha256_file(dataset_path),
            config_snapshot=config_snapshot,
            problems={pid: PENDING for pid in problem_ids},
            created_at=time.time(),
        )
        self.save_manifest(manifest)
        return manifest

    def resume_manifest(self, dataset_path: str | Path, method: str) -> RunManifest:
        manifest = self.load_manifest()
        digest = sha256_file(dataset_path)
        if manifest.dataset_digest != digest:
            raise ConfigError(
                "cannot resume: dataset digest changed "
                f"({manifest.dataset_digest[:12]} != {digest[:12]})"
            )
        if manifest.method != method:
            raise ConfigError(
                f"cannot resume: run used method {manifest.method}, requested {method}"
            )
        return manifest

    # -- per-problem state ---------------------------------------------------

    def set_status(self, manifest: RunManifest, problem_id: str, status: str) -> None:
        manifest.problems[problem_id] = status
        self.save_manifest(manifest)

    def write_outcome(self, problem_id: str, outcome_dict: dict[str, Any]) -> None:
        path = self.outcome_path(problem_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(outcome_dict), encoding="utf-8")

    def read_outcome(self, problem_id: str) -> dict[str, Any] | None:
        path = self.outcome_path(problem_id)
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def write_tests(self, problem_id: str, tests: list[str]) -> None:
        path = self.tests_path(problem_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json({"visible_tests": tests}), encoding="utf-8")

    def read_tests(self, problem_id: str) -> list[str] | None:
        path = self.tests_path(problem_id)
        if not path.is_file():
            return None
        return list(json.loads(path.read_text(encoding="utf-8"))["visible_tests"])


class RunLock:
    """One process owns a run directory at a time."""

    def __init__(self, run_dir: str | Path):
        self.path = Path(run_dir) / ".lock"
        self._held = False

    def __enter__(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            pid = self.path.read_text(encoding="utf-8").strip()
            if pid and _pid_alive(pid):
                raise ConfigError(
                    f"run directory {self.path.parent} is locked by pid {pid}"
                )
            # Stale lock from a dead process; take it over.
            self.path.unlink()
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        self._held = True
        return self

    def __exit__(self, *exc) -> None:
        if self._held:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
            self._held = False


def _pid_alive(pid: str) -> bool:
    try:
        os.kill(int(pid), 0)
        return True
    except (ValueError, ProcessLookupError):
        return False
    except PermissionError:
        return True
