from __future__ import annotations

import json
import os
from pathlib import Path

import pytest

from orps.cli import EXIT_CONFIG, EXIT_DATASET, EXIT_INFRA, EXIT_OK, main
from orps.fake_runner import FIXTURES_ENV

from scenario import build_improving_scenario, build_sweep_scenario


def _run_flags(sc, out_dir, extra=()):
    return [
        "run",
        "--dataset", str(sc.dataset_path),
        "--mock-script", str(sc.script_dir),
        "--seed", "7",
        "--beam-width", "3",
        "--rounds", "5",
        "--samples", "4",
        "--max-parallel", "4",
        "--out", str(out_dir),
        "--run-id", "r1",
        *extra,
    ]


@pytest.fixture(scope="module")
def improving(tmp_path_factory):
    sc = build_improving_scenario(tmp_path_factory.mktemp("scenario"))
    old = os.environ.get(FIXTURES_ENV)
    os.environ[FIXTURES_ENV] = str(sc.fixtures_path)
    yield sc
    if old is None:
        os.environ.pop(FIXTURES_ENV, None)
    else:
        os.environ[FIXTURES_ENV] = old


@pytest.fixture(scope="module")
def completed_run(improving, tmp_path_factory):
    """One finished orps run shared by the read-only assertions."""
    out = tmp_path_factory.mktemp("out")
    assert main(_run_flags(improving, out, ["--method", "orps"])) == EXIT_OK
    return out / "r1"


def test_run_orps_end_to_end(completed_run):
    report = json.loads((completed_run / "report.json").read_text())
    assert report["pass_at_1"] == 100.0
    assert report["valid"] == 100.0
    assert report["method"] == "orps"
    assert report["time_coverage"] == 1.0
    assert (completed_run / "report.md").is_file()
    assert (completed_run / "radar.csv").is_file()
    assert (completed_run / "figures" / "radar.png").is_file()
    assert (completed_run / "figures" / "tags.png").is_file()
    # per-problem tree persistence: round snapshots with node documents
    p1 = completed_run / "problem_p1"
    assert (p1 / "round_0" / "beam.json").is_file()
    assert list((p1 / "round_1").glob("node_*.json"))
    assert (p1 / "round_2" / "beam.json").is_file()
    assert (p1 / "outcome.json").is_file()


def test_report_md_has_the_four_metric_columns(completed_run):
    md = (completed_run / "report.md").read_text()
    assert "| Method | Pass@1 | Tests | Valid | Time |" in md
    assert "## Per-tag results" in md


def test_run_is_byte_identical_across_reruns(improving, completed_run, tmp_path):
    out_b = tmp_path / "b"
    assert main(_run_flags(improving, out_b, ["--method", "orps"])) == EXIT_OK
    assert (completed_run / "report.json").read_bytes() == (
        out_b / "r1" / "report.json"
    ).read_bytes()


def test_run_refuses_existing_dir_without_resume(improving, completed_run):
    flags = _run_flags(improving, completed_run.parent, ["--method", "orps"])
    assert main(flags) == EXIT_CONFIG


def test_resume_rejects_changed_dataset(improving, completed_run, tmp_path):
    altered = tmp_path / "altered.jsonl"
    altered.write_text(improving.dataset_path.read_text() + "\n", encoding="utf-8")
    flags = _run_flags(improving, completed_run.parent, ["--resume"])
    flags[flags.index(str(improving.dataset_path))] = str(altered)
    assert main(flags) == EXIT_CONFIG


def test_report_regenerates_without_execution(improving, completed_run):
    original = (completed_run / "report.json").read_bytes()
    (completed_run / "report.json").unlink()
    (completed_run / "report.md").unlink()
    assert main(["report", str(completed_run)]) == EXIT_OK
    assert (completed_run / "report.json").read_bytes() == original
    assert (completed_run / "report.md").is_file()


def test_bon_manifest_records_method(improving, tmp_path):
    out = tmp_path / "out"
    flags = _run_flags(improving, out, ["--method", "bon", "--bon-n", "6", "--no-time"])
    assert main(flags) == EXIT_OK
    manifest = json.loads((out / "r1" / "manifest.json").read_text())
    assert manifest["method"] == "bon(6)"


def test_resume_skips_done_problems(tmp_path, monkeypatch):
    sc = build_improving_scenario(tmp_path / "scenario")
    monkeypatch.setenv(FIXTURES_ENV, str(sc.fixtures_path))
    # First attempt: p4/p5 scripted responses are missing entirely and the
    # root defaults are gone, so the run aborts with an infrastructure error
    # after the earlier problems were persisted.
    hidden: list[tuple[Path, Path]] = []
    for name in ("p4", "p5"):
        src = sc.script_dir / name
        dst = sc.root / f"hidden_{name}"
        src.rename(dst)
        hidden.append((src, dst))
    root_defaults = []
    for fname in ("programmer_default.txt", "critic_default.txt"):
        p = sc.script_dir / fname
        root_defaults.append((p, p.read_text()))
        p.unlink()
    for pid in ("p1", "p2", "p3"):
        for path, text in root_defaults:
            (sc.script_dir / pid / path.name).write_text(text)

    out = tmp_path / "out"
    flags = _run_flags(sc, out, ["--max-parallel", "1", "--no-time"])
    assert main(flags) == EXIT_INFRA

    run_dir = out / "r1"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    for pid in ("p1", "p2", "p3"):
        assert manifest["problems"][pid] == "done"
    done_mtimes = {
        pid: (run_dir / f"problem_{pid}" / "outcome.json").stat().st_mtime_ns
        for pid in ("p1", "p2", "p3")
    }

    for src, dst in hidden:
        dst.rename(src)
    for path, text in root_defaults:
        path.write_text(text)

    assert main(flags + ["--resume"]) == EXIT_OK
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert all(status == "done" for status in manifest["problems"].values())
    for pid, mtime in done_mtimes.items():
        assert (
            run_dir / f"problem_{pid}" / "outcome.json"
        ).stat().st_mtime_ns == mtime, f"{pid} was re-run"


def test_report_missing_run_dir_is_dataset_error(tmp_path):
    assert main(["report", str(tmp_path / "nope")]) == EXIT_DATASET


def test_exit_codes_for_bad_inputs(improving, tmp_path):
    missing_cfg = ["--config", str(tmp_path / "none.yaml")]
    assert main(_run_flags(improving, tmp_path / "o1", missing_cfg)) == EXIT_CONFIG
    bad_dataset = _run_flags(improving, tmp_path / "o2")
    bad_dataset[2] = str(tmp_path / "missing.jsonl")
    assert main(bad_dataset) == EXIT_DATASET
    bad_script = _run_flags(improving, tmp_path / "o3")
    bad_script[4] = str(tmp_path / "missing-script")
    assert main(bad_script) == EXIT_INFRA


def test_sweep_emits_curves(tmp_path, monkeypatch):
    sc = build_sweep_scenario(tmp_path / "sweep")
    monkeypatch.setenv(FIXTURES_ENV, str(sc.fixtures_path))
    out = tmp_path / "out"
    args = [
        "sweep",
        "--dataset", str(sc.dataset_path),
        "--mock-script", str(sc.script_dir),
        "--budgets", "1,5,20",
        "--seed", "3",
        "--out", str(out),
        "--run-id", "sw",
        "--no-time",
        "--max-parallel", "4",
    ]
    assert main(args) == EXIT_OK
    run_dir = out / "sw"
    curves = (run_dir / "curves.csv").read_text().strip().splitlines()
    assert curves[0] == "method,budget,pass_at_1"
    assert len(curves) == 7  # header + 2 methods x 3 budgets
    assert (run_dir / "figures" / "curves.png").is_file()
    sweep_doc = json.loads((run_dir / "sweep.json").read_text())
    orps_curve = [r["pass_at_1"] for r in sweep_doc["rows"] if r["method"] == "orps"]
    assert orps_curve == sorted(orps_curve)  # non-decreasing in budget
    assert "## Scaling sweep" in (run_dir / "report.md").read_text()


def test_import_command(tmp_path):
    src = tmp_path / "he.jsonl"
    src.write_text(
        json.dumps(
            {
                "task_id": "HumanEval/7",
                "prompt": "def f(x):\n",
                "canonical_solution": "    return x\n",
                "test": "def check(c):\n    assert c(3) == 3\n",
                "entry_point": "f",
            }
        )
        + "\n",
        encoding="utf-8",
    )
    dst = tmp_path / "out.jsonl"
    assert main(["import", "--format", "humaneval", str(src), str(dst)]) == EXIT_OK
    line = json.loads(dst.read_text().splitlines()[0])
    assert line["id"] == "HumanEval/7"
