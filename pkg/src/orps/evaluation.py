"""Benchmark harness: runs methods over a problem set, scores final programs
on hidden tests, and aggregates the four headline metrics
(Pass@1 / Tests / Valid / Time)."""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

from .config import AblationFlags, AppConfig, SearchConfig
from .dataset import ProblemRecord
from .errors import (
    DegenerateReference,
    EmptyExpansion,
    GatewayUnavailable,
    IncomparableProfiles,
    MissingCode,
    NoValidTests,
    OrpsError,
)
from .executor import ExecutionService, PerfProfile, relative_time
from .gateway import ModelGateway, parse_programmer
from .runner_protocol import PASS
from .search import run_search
from .util import stable_seed

log = logging.getLogger(__name__)

METHODS = ("orps", "orps_with_tests", "cot", "bon", "orps_minus_execution", "orps_minus_reasoning")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    bon_n: int = 1

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}")
        if self.name == "bon" and self.bon_n < 1:
            raise ValueError("bon needs n >= 1")

    @property
    def label(self) -> str:
        return f"bon({self.bon_n})" if self.name == "bon" else self.name

    @property
    def uses_search(self) -> bool:
        return self.name.startswith("orps")

    def ablation(self) -> AblationFlags:
        return AblationFlags(
            disable_execution_feedback=self.name == "orps_minus_execution",
            disable_reasoning=self.name == "orps_minus_reasoning",
        )


@dataclass
class Outcome:
    """Hidden-test scoring plus everything needed to re-derive the metrics."""

    problem_id: str
    valid: bool = False
    all_pass: bool = False
    fraction: float = 0.0
    tests_total: int = 0
    tests_passed: int = 0
    per_test_status: list[str] = field(default_factory=list)
    relative_time: float | None = None
    static: dict[str, int] | None = None
    profile: dict[str, Any] | None = None
    reference_static: dict[str, int] | None = None
    reference_profile: dict[str, Any] | None = None
    final_code: str = ""
    completions: int = 0
    completions_by_role: dict[str, int] = field(default_factory=dict)
    prompt_tokens: int = 0
    completion_tokens: int = 0
    rounds_executed: int = 0
    tags: list[str] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "valid": self.valid,
            "all_pass": self.all_pass,
            "fraction": self.fraction,
            "tests_total": self.tests_total,
            "tests_passed": self.tests_passed,
            "per_test_status": list(self.per_test_status),
            "relative_time": self.relative_time,
            "static": self.static,
            "profile": self.profile,
            "reference_static": self.reference_static,
            "reference_profile": self.reference_profile,
            "final_code": self.final_code,
            "completions": self.completions,
            "completions_by_role": dict(sorted(self.completions_by_role.items())),
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "rounds_executed": self.rounds_executed,
            "tags": list(self.tags),
            "error": self.error,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "Outcome":
        known = {f for f in Outcome.__dataclass_fields__}
        return Outcome(**{k: v for k, v in data.items() if k in known})


@dataclass
class MethodRun:
    method: str
    outcomes: list[Outcome] = field(default_factory=list)

    @property
    def total_completions(self) -> int:
        return sum(o.completions for o in self.outcomes)

    def completions_for_roles(self, roles: Sequence[str]) -> int:
        return sum(
            o.completions_by_role.get(role, 0) for o in self.outcomes for role in roles
        )


@dataclass
class BenchmarkReport:
    method: str
    n_problems: int
    pass_at_1: float
    tests: float
    valid: float
    time: float | None
    time_coverage: float
    per_problem: list[dict[str, Any]] = field(default_factory=list)
    per_tag: dict[str, dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "n_problems": self.n_problems,
            "pass_at_1": self.pass_at_1,
            "tests": self.tests,
            "valid": self.valid,
            "time": self.time,
            "time_coverage": self.time_coverage,
            "per_problem": self.per_problem,
            "per_tag": self.per_tag,
        }


def aggregate(outcomes: Sequence[Outcome], method: str = "") -> BenchmarkReport:
    """Fold outcomes into the four percentage metrics.

    Time averages only over problems where a relative time exists; the
    fraction of such problems is reported as time_coverage.
    """
    if not outcomes:
        raise ValueError("aggregate requires at least one outcome")
    ordered = sorted(outcomes, key=lambda o: o.problem_id)
    n = len(ordered)
    pass_at_1 = 100.0 * sum(1 for o in ordered if o.all_pass) / n
    tests = 100.0 * sum(o.fraction for o in ordered) / n
    valid = 100.0 * sum(1 for o in ordered if o.valid) / n
    times = [o.relative_time for o in ordered if o.relative_time is not None]
    time_mean = sum(times) / len(times) if times else None

    per_tag: dict[str, dict[str, Any]] = {}
    for outcome in ordered:
        for tag in outcome.tags or ["untagged"]:
            bucket = per_tag.setdefault(tag, {"n": 0, "solved": 0})
            bucket["n"] += 1
            bucket["solved"] += 1 if outcome.all_pass else 0
    for bucket in per_tag.values():
        bucket["pass_at_1"] = 100.0 * bucket["solved"] / bucket["n"]
        bucket["unsolved"] = bucket["n"] - bucket["solved"]

    return BenchmarkReport(
        method=method,
        n_problems=n,
        pass_at_1=pass_at_1,
        tests=tests,
        valid=valid,
        time=time_mean,
        time_coverage=len(times) / n,
        per_problem=[o.to_dict() for o in ordered],
        per_tag=dict(sorted(per_tag.items())),
    )


# ---------------------------------------------------------------------------
# Scoring one candidate against hidden tests


class ReferenceCache:
    """Profiles and static metrics of reference solutions, keyed by workload."""

    def __init__(self, executor: ExecutionService):
        self.executor = executor
        self._profiles: dict[tuple[str, tuple[int, ...]], PerfProfile] = {}
        self._static: dict[str, dict[str, int] | None] = {}
        self._lock = threading.Lock()

    def profile(
        self, problem: ProblemRecord, tests: list[str], test_indices: tuple[int, ...]
    ) -> PerfProfile:
        key = (problem.id, test_indices)
        with self._lock:
            if key in self._profiles:
                return self._profiles[key]
        profile = self.executor.profile_candidate(problem.reference_solution, tests)
        with self._lock:
            self._profiles.setdefault(key, profile)
            return self._profiles[key]

    def static(self, problem: ProblemRecord) -> dict[str, int] | None:
        with self._lock:
            if problem.id in self._static:
                return self._static[problem.id]
        report = self.executor.execute_candidate(problem.reference_solution, [])
        value = None
        if report.static is not None:
            value = {
                "code_length_lines": report.static.code_length_lines,
                "ast_node_count": report.static.ast_node_count,
                "cyclomatic": report.static.cyclomatic,
                "cognitive": report.static.cognitive,
            }
        with self._lock:
            self._static.setdefault(problem.id, value)
            return self._static[problem.id]


def evaluate_solution(
    problem: ProblemRecord,
    code: str,
    executor: ExecutionService,
    reference_cache: ReferenceCache | None = None,
    profile: bool = True,
) -> Outcome:
    """Score final code on the held-out tests; never raises on guest failure."""
    if not problem.hidden_tests:
        raise ValueError(f"problem {problem.id} has no hidden tests to score against")
    report = executor.execute_candidate(code, problem.hidden_tests)
    outcome = Outcome(
        problem_id=problem.id,
        valid=report.valid,
        all_pass=report.all_passed,
        fraction=report.pass_fraction if report.valid else 0.0,
        tests_total=report.tests_total,
        tests_passed=report.tests_passed,
        per_test_status=[t.status for t in report.per_test],
        final_code=code,
        tags=list(problem.tags),
    )
    if report.static is not None:
        outcome.static = {
            "code_length_lines": report.static.code_length_lines,
            "ast_node_count": report.static.ast_node_count,
            "cyclomatic": report.static.cyclomatic,
            "cognitive": report.static.cognitive,
        }

    wants_time = (
        profile
        and problem.reference_solution is not None
        and report.valid
        and report.tests_passed > 0
    )
    if wants_time:
        passed_indices = tuple(t.index for t in report.per_test if t.status == PASS)
        workload = [problem.hidden_tests[i] for i in passed_indices]
        cache = reference_cache or ReferenceCache(executor)
        try:
            candidate_profile = executor.profile_candidate(code, workload)
            ref_profile = cache.profile(problem, workload, passed_indices)
            outcome.relative_time = relative_time(candidate_profile, ref_profile)
            outcome.profile = candidate_profile.to_dict()
            outcome.reference_profile = ref_profile.to_dict()
        except (IncomparableProfiles, DegenerateReference) as exc:
            log.info("no relative time for %s: %s", problem.id, exc)
        outcome.reference_static = cache.static(problem)
    return outcome


# ---------------------------------------------------------------------------
# Method drivers


def prepare_visible_tests(
    problem: ProblemRecord,
    method: MethodSpec,
    gateway: ModelGateway,
    executor: ExecutionService,
    cfg: AppConfig,
) -> list[str]:
    """Dataset tests in with-tests mode, self-generated ones otherwise."""
    if method.name == "orps_with_tests":
        return list(problem.visible_tests)
    if method.name == "cot":
        return []
    bare = replace(problem, visible_tests=[])
    return gateway.generate_tests(bare, cfg.self_test_count, executor, limits=cfg.limits)


def _final_code_orps(
    problem: ProblemRecord,
    method: MethodSpec,
    cfg: AppConfig,
    gateway: ModelGateway,
    executor: ExecutionService,
    visible: list[str],
    store,
    clock,
    resume: bool,
) -> tuple[str, int]:
    search_cfg = replace(
        cfg.search,
        ablation=method.ablation(),
        rng_seed=stable_seed(cfg.search.rng_seed, problem.id),
    )
    result = run_search(
        problem,
        search_cfg,
        gateway,
        executor,
        visible_tests=visible,
        store=store,
        max_parallel=1,
        clock=clock,
        resume=resume,
    )
    return result.best.code, result.rounds_executed


def _final_code_cot(
    problem: ProblemRecord,
    cfg: AppConfig,
    gateway: ModelGateway,
) -> str:
    completions = gateway.propose(
        problem.id,
        problem.prompt,
        f"Problem:\n{problem.prompt}",
        n=1,
        round_index=1,
        start_index=0,
        max_new_tokens=cfg.search.generation_budget,
        seed=stable_seed(cfg.search.rng_seed, problem.id, 1, 0),
    )
    _, code = parse_programmer(completions[0].text)
    return code


def _final_code_bon(
    problem: ProblemRecord,
    method: MethodSpec,
    cfg: AppConfig,
    gateway: ModelGateway,
    executor: ExecutionService,
    visible: list[str],
) -> str:
    completions = gateway.propose(
        problem.id,
        problem.prompt,
        f"Problem:\n{problem.prompt}",
        n=method.bon_n,
        round_index=1,
        start_index=0,
        max_new_tokens=cfg.search.generation_budget,
        seed=stable_seed(cfg.search.rng_seed, problem.id, 1, 0),
    )
    best_code = None
    best_fraction = -1.0
    for completion in completions:
        try:
            _, code = parse_programmer(completion.text)
        except MissingCode:
            continue
        report = executor.execute_candidate(code, visible)
        fraction = report.pass_fraction if report.valid else 0.0
        if fraction > best_fraction:  # ties keep the earliest index
            best_fraction = fraction
            best_code = code
    if best_code is None:
        raise MissingCode("every sampled candidate was unparseable")
    return best_code


def run_problem(
    problem: ProblemRecord,
    method: MethodSpec,
    cfg: AppConfig,
    gateway: ModelGateway,
    executor: ExecutionService,
    reference_cache: ReferenceCache | None = None,
    store=None,
    clock=None,
    resume: bool = False,
    profile: bool = True,
    tests_cache: Callable[[str], list[str] | None] | None = None,
    tests_save: Callable[[str, list[str]], None] | None = None,
) -> Outcome:
    """One problem end to end; candidate-level failures become invalid outcomes.

    ``tests_cache``/``tests_save`` let a run directory pin the self-generated
    visible tests, keeping them fixed when a problem is retried on resume.
    """
    import time as _time

    clock = clock or _time.monotonic
    try:
        visible = tests_cache(problem.id) if tests_cache else None
        if visible is None:
            visible = prepare_visible_tests(problem, method, gateway, executor, cfg)
            if tests_save is not None:
                tests_save(problem.id, visible)
        rounds = 0
        if method.uses_search:
            code, rounds = _final_code_orps(
                problem, method, cfg, gateway, executor, visible, store, clock, resume
            )
        elif method.name == "cot":
            code = _final_code_cot(problem, cfg, gateway)
        else:
            code = _final_code_bon(problem, method, cfg, gateway, executor, visible)
        outcome = evaluate_solution(
            problem, code, executor, reference_cache, profile=profile
        )
        outcome.rounds_executed = rounds
    except (GatewayUnavailable, KeyboardInterrupt):
        raise
    except (EmptyExpansion, MissingCode, NoValidTests, OrpsError) as exc:
        log.warning("problem %s failed: %s", problem.id, exc)
        outcome = Outcome(
            problem_id=problem.id,
            tests_total=len(problem.hidden_tests),
            tags=list(problem.tags),
            error=f"{type(exc).__name__}: {exc}",
        )
    usage = gateway.usage
    outcome.completions = usage.total_completions
    outcome.completions_by_role = dict(usage.completions_by_role)
    outcome.prompt_tokens = usage.prompt_tokens
    outcome.completion_tokens = usage.completion_tokens
    return outcome


def run_method(
    problems: Sequence[ProblemRecord],
    method: MethodSpec,
    cfg: AppConfig,
    backend,
    executor: ExecutionService,
    store_for: Callable[[str], Any] | None = None,
    on_outcome: Callable[[Outcome], None] | None = None,
    skip: Callable[[str], Outcome | None] | None = None,
    clock=None,
    max_parallel: int = 1,
    profile: bool = True,
    resume: bool = False,
    tests_cache: Callable[[str], list[str] | None] | None = None,
    tests_save: Callable[[str, list[str]], None] | None = None,
) -> MethodRun:
    """Run one method over the problem set.

    ``skip`` may return a previously persisted outcome to reuse (resume);
    ``store_for`` maps a problem id to its tree store; ``on_outcome`` fires
    as each problem finishes. Problems run concurrently up to max_parallel,
    and outcomes are folded in sorted problem-id order.
    """
    reference_cache = ReferenceCache(executor)

    def one(problem: ProblemRecord) -> Outcome:
        previous = skip(problem.id) if skip else None
        if previous is not None:
            return previous
        gateway = ModelGateway(backend, cfg.gateway)
        outcome = run_problem(
            problem,
            method,
            cfg,
            gateway,
            executor,
            reference_cache=reference_cache,
            store=store_for(problem.id) if store_for else None,
            clock=clock,
            resume=resume,
            profile=profile,
            tests_cache=tests_cache,
            tests_save=tests_save,
        )
        if on_outcome:
            on_outcome(outcome)
        return outcome

    if max_parallel > 1 and len(problems) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            outcomes = list(pool.map(one, problems))
    else:
        outcomes = [one(p) for p in problems]
    outcomes.sort(key=lambda o: o.problem_id)
    return MethodRun(method=method.label, outcomes=outcomes)


def scale_search_to_budget(search: SearchConfig, budget: int) -> SearchConfig:
    """Shrink (K, T, N) so the worst-case programmer-completion count fits
    the budget; with budget 1 the search degenerates to a single sample."""
    if budget <= 1:
        return replace(search, beam_width=1, max_rounds=1, expansion_factor=1)
    k, t = search.beam_width, search.max_rounds
    for n in range(budget, 0, -1):
        worst = n + (t - 1) * min(k, n) * n
        if worst <= budget:
            return replace(search, expansion_factor=n)
    t_eff = max(1, min(t, budget))
    return replace(search, beam_width=1, max_rounds=t_eff, expansion_factor=1)


def scaling_sweep(
    problems: Sequence[ProblemRecord],
    budgets: Sequence[int],
    cfg: AppConfig,
    backend,
    executor: ExecutionService,
    clock=None,
    profile: bool = False,
) -> tuple[list[dict[str, Any]], dict[str, MethodRun]]:
    """Pass@1 under growing inference budgets for the search and for plain
    best-of-n sampling. Returns (curve rows, runs keyed by row label)."""
    if list(budgets) != sorted(budgets) or len(set(budgets)) != len(budgets):
        raise ValueError("budgets must be strictly ascending")
    rows: list[dict[str, Any]] = []
    runs: dict[str, MethodRun] = {}
    for budget in budgets:
        scaled_cfg = replace(cfg, search=scale_search_to_budget(cfg.search, budget))
        for method, run_cfg in (
            (MethodSpec("orps"), scaled_cfg),
            (MethodSpec("bon", bon_n=budget), cfg),
        ):
            run = run_method(
                problems, method, run_cfg, backend, executor, clock=clock, profile=profile
            )
            report = aggregate(run.outcomes, method=method.label)
            label = f"{method.name}@{budget}"
            runs[label] = run
            rows.append(
                {"method": method.name, "budget": budget, "pass_at_1": report.pass_at_1}
            )
    return rows, runs
