"""Acceptance criteria, one test per criterion at its stated tolerance.

A summary hook in conftest.py prints one pass/fail line per criterion at the
end of the session. Criteria 7 and 8 live in the sandbox runner package's own
suite; criterion 9 runs here when that package is installed and is skipped
otherwise so this suite stays green with only the protocol fake.
"""

from __future__ import annotations

import importlib.util
import json
import os
import random
import subprocess
import sys
import time

import jsonschema
import pytest

from orps.cli import EXIT_OK, main as cli_main
from orps.config import AppConfig, GatewayConfig, ResourceLimits, SearchConfig
from orps.errors import MalformedScore, MissingCode
from orps.evaluation import MethodSpec, aggregate, run_method
from orps.executor import ExecutionService, PerfProfile, default_runner_cmd, relative_time
from orps.fake_runner import FIXTURES_ENV
from orps.gateway import ScriptedBackend, parse_programmer, parse_score
from orps.runner_protocol import load_schema
from orps.util import canonical_json

from conftest import REPO_ROOT
from scenario import (
    build_ablation_scenario,
    build_improving_scenario,
    brute_force_metrics,
    random_outcome_set,
)

RUNNER_AVAILABLE = importlib.util.find_spec("orps_runner") is not None


def _cfg(seed=7, n=4) -> AppConfig:
    return AppConfig(
        search=SearchConfig(
            beam_width=3, max_rounds=5, expansion_factor=n, rng_seed=seed
        ),
        gateway=GatewayConfig(retry_backoff_s=0.0),
    )


def _subprocess_service(fixtures_path) -> ExecutionService:
    cmd = default_runner_cmd() + ["--fixtures", str(fixtures_path)]
    return ExecutionService(runner_cmd=cmd, timing_source="report")


def _load(sc):
    from orps.dataset import load_problems

    return load_problems(sc.dataset_path)


def test_criterion_01_scripted_end_to_end_beats_bon(tmp_path):
    started = time.monotonic()
    sc = build_improving_scenario(tmp_path)
    problems = _load(sc)
    executor = _subprocess_service(sc.fixtures_path)
    cfg = _cfg()

    def run(method: MethodSpec):
        backend = ScriptedBackend(sc.script_dir)
        return run_method(
            problems, method, cfg, backend, executor, max_parallel=4, profile=False
        )

    orps_run = run(MethodSpec("orps"))
    orps_report = aggregate(orps_run.outcomes, method="orps")
    assert orps_report.pass_at_1 == 100.0

    # Identical completion budget: everything the search spent except critic
    # calls, split evenly over the problems.
    critic = orps_run.completions_for_roles(["critic"])
    budget = orps_run.total_completions - critic
    per_problem = (budget - len(problems)) // len(problems)  # one test-writer call each
    assert per_problem == 16

    bon_run = run(MethodSpec("bon", bon_n=per_problem))
    bon_report = aggregate(bon_run.outcomes, method="bon")
    assert bon_run.total_completions == budget
    assert bon_report.pass_at_1 <= 60.0
    assert bon_report.pass_at_1 == 40.0  # finds the two shallow solutions only

    # Deterministic across three reruns (first one included).
    snapshots = [canonical_json(orps_report.to_dict())]
    for _ in range(2):
        rerun = aggregate(run(MethodSpec("orps")).outcomes, method="orps")
        snapshots.append(canonical_json(rerun.to_dict()))
    assert len(set(snapshots)) == 1

    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"scenario took {elapsed:.1f}s"


def test_criterion_02_ablation_ordering(tmp_path):
    full = build_ablation_scenario(tmp_path / "full")
    degraded = build_ablation_scenario(tmp_path / "degraded", reasoning_variant=True)
    cfg = _cfg()

    def run(sc, method):
        return aggregate(
            run_method(
                _load(sc),
                method,
                cfg,
                ScriptedBackend(sc.script_dir),
                _subprocess_service(sc.fixtures_path),
                max_parallel=4,
                profile=False,
            ).outcomes,
            method=method.label,
        )

    orps = run(full, MethodSpec("orps"))
    minus_reasoning = run(degraded, MethodSpec("orps_minus_reasoning"))
    minus_execution = run(full, MethodSpec("orps_minus_execution"))

    assert orps.pass_at_1 == 100.0
    assert minus_reasoning.pass_at_1 == 80.0
    assert minus_execution.pass_at_1 == 40.0
    assert orps.pass_at_1 >= minus_reasoning.pass_at_1 >= minus_execution.pass_at_1


def test_criterion_03_metric_oracle_equivalence():
    rng = random.Random(20240131)
    for _ in range(200):
        outcomes = random_outcome_set(rng)
        report = aggregate(outcomes)
        bf_pass, bf_tests, bf_valid, bf_time = brute_force_metrics(outcomes)
        assert abs(report.pass_at_1 - bf_pass) <= 1e-9
        assert abs(report.tests - bf_tests) <= 1e-9
        assert abs(report.valid - bf_valid) <= 1e-9
        if bf_time is None:
            assert report.time is None
        else:
            assert abs(report.time - bf_time) <= 1e-9
        assert report.pass_at_1 <= report.tests + 1e-9
        assert report.pass_at_1 <= report.valid + 1e-9


def test_criterion_04_relative_time_identity_and_linearity():
    profile = PerfProfile(
        counters_available=True,
        time_enabled_ns=987_654_321,
        instructions=10,
        branch_misses=1,
        page_faults=1,
        wall_ns=987_654_321,
    )
    assert relative_time(profile, profile) == 100.0

    reference = PerfProfile(counters_available=False, page_faults=0, wall_ns=777_777)
    for t in (1, 1000, 123_456_789):
        single = PerfProfile(counters_available=False, page_faults=0, wall_ns=t)
        double = PerfProfile(counters_available=False, page_faults=0, wall_ns=2 * t)
        assert abs(relative_time(double, reference) - 2 * relative_time(single, reference)) <= 1e-9


def test_criterion_05_parser_suite():
    for x in range(1, 11):
        assert parse_score(f"=== Score ===\n$${x}$$", 1, 10) == x

    rng = random.Random(99)
    alphabet = "$ \n`=abc0123.5-{}[]()#"
    for _ in range(10_000):
        blob = "".join(rng.choices(alphabet, k=rng.randint(0, 80)))
        try:
            value = parse_score(blob, 1, 10)
            assert 1 <= value <= 10
        except MalformedScore:
            pass
        try:
            _, code = parse_programmer(blob)
            assert "```" not in code
        except MissingCode:
            pass

    with pytest.raises(MalformedScore):
        parse_score("score: three", 1, 10)
    with pytest.raises(MissingCode):
        parse_programmer("there is no program here")


def test_criterion_06_fake_runner_protocol_conformance():
    schema = load_schema()
    report_schema = {"$ref": "#/$defs/report", "$defs": schema["$defs"]}
    job_schema = {"$ref": "#/$defs/job", "$defs": schema["$defs"]}
    golden = REPO_ROOT / "schemas" / "golden"
    pairs = sorted(golden.glob("job_*.json"))
    assert pairs, "golden job documents are committed"
    for job_path in pairs:
        name = job_path.name[4:-5]
        job = json.loads(job_path.read_text())
        jsonschema.validate(job, job_schema)
        proc = subprocess.run(
            default_runner_cmd(),
            input=job_path.read_bytes(),
            capture_output=True,
            timeout=30,
            env={k: v for k, v in os.environ.items() if k != FIXTURES_ENV},
        )
        assert proc.returncode == 0, proc.stderr
        produced = json.loads(proc.stdout)
        jsonschema.validate(produced, report_schema)
        expected = json.loads((golden / f"report_{name}.json").read_text())
        assert produced == expected, f"golden mismatch for {name}"


QUADRATIC_SORT = """
def sort_values(values):
    out = list(values)
    n = len(out)
    for i in range(n):
        smallest = i
        for j in range(i + 1, n):
            if out[j] < out[smallest]:
                smallest = j
        out[i], out[smallest] = out[smallest], out[i]
    return out

data = [(i * 2654435761) % 1000003 for i in range(10_000)]
result = sort_values(data)
"""

LINEARITHMIC_SORT = """
def sort_values(values):
    if len(values) <= 1:
        return list(values)
    mid = len(values) // 2
    left = sort_values(values[:mid])
    right = sort_values(values[mid:])
    out = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            out.append(left[i]); i += 1
        else:
            out.append(right[j]); j += 1
    out.extend(left[i:])
    out.extend(right[j:])
    return out

data = [(i * 2654435761) % 1000003 for i in range(10_000)]
result = sort_values(data)
"""

SORT_TEST = "assert result == sorted(data)"


@pytest.mark.skipif(
    not RUNNER_AVAILABLE, reason="sandbox runner package not installed"
)
def test_criterion_09_profiling_sanity_quadratic_vs_linearithmic():
    from orps_runner import runner_command

    service = ExecutionService(
        runner_cmd=runner_command(),
        limits=ResourceLimits(cpu_seconds=30.0),
        timing_source="auto",
        profile_repetitions=1,
    )
    quad = service.profile_candidate(QUADRATIC_SORT, [SORT_TEST])
    fast = service.profile_candidate(LINEARITHMIC_SORT, [SORT_TEST])
    assert quad.counters_available == fast.counters_available
    if quad.counters_available:
        assert quad.instructions > fast.instructions
    else:
        # Fallback contract: flags plus wall time.
        for profile in (quad, fast):
            assert profile.instructions is None
            assert profile.branch_misses is None
            assert profile.wall_ns > 0
            assert profile.page_faults >= 0
        assert quad.wall_ns > fast.wall_ns


@pytest.mark.skipif(
    not os.environ.get("ORPS_LIVE_SMOKE"),
    reason="live smoke requires ORPS_LIVE_SMOKE=1 and a configured endpoint",
)
def test_criterion_10_live_smoke(tmp_path):
    from orps.dataset import ProblemRecord, save_problems

    problem = ProblemRecord(
        id="smoke",
        prompt=(
            "Write a Python function add(a, b) that returns the sum of two "
            "integers. Define it at module level."
        ),
        hidden_tests=["assert add(2, 3) == 5", "assert add(-1, 1) == 0"],
    )
    dataset = tmp_path / "smoke.jsonl"
    save_problems([problem], dataset)
    out = tmp_path / "runs"
    flags = [
        "run",
        "--dataset", str(dataset),
        "--method", "orps",
        "--beam-width", "1",
        "--rounds", "1",
        "--samples", "1",
        "--seed", "1",
        "--out", str(out),
        "--run-id", "smoke",
        "--no-time",
    ]
    assert cli_main(flags) == EXIT_OK
    run_dir = out / "smoke"
    assert (run_dir / "report.json").is_file()
    assert (run_dir / "problem_smoke" / "round_1" / "beam.json").is_file()
    assert cli_main(["report", str(run_dir)]) == EXIT_OK
