"""Beam search over reasoning states.

Each round expands every beam node into up to N candidate successors
(reasoning + code), grounds them with sandboxed execution, scores them with
the critic, and keeps the top K. A round in which a beam node passes every
visible test ends the search early.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .config import CompletionPolicy, SearchConfig
from .errors import BudgetTooSmall, EmptyExpansion, MissingCode
from .executor import ExecutionReport, ExecutionService, PerfProfile, relative_time
from .gateway import ModelGateway, parse_programmer
from .tree import (
    CODE,
    CRITIQUE,
    EXECUTION_FEEDBACK,
    REASONING,
    SearchResult,
    Segment,
    TraceNode,
    Tree,
    TreeStore,
)
from .util import estimate_tokens, stable_seed

log = logging.getLogger(__name__)

ELISION_MARKER = "[... earlier steps omitted ...]"

_SEGMENT_TITLES = {
    REASONING: "Reasoning",
    CODE: "Code",
    EXECUTION_FEEDBACK: "Execution feedback",
    CRITIQUE: "Critique",
}


def render_segment(segment: Segment) -> str:
    title = _SEGMENT_TITLES[segment.kind]
    return f"### {title} (round {segment.round})\n{segment.text}"


def render_context(problem_text: str, segments: Sequence[Segment], budget: int) -> str:
    """Prompt-ready chain: the problem statement plus as many of the newest
    segments as fit; elided middles are replaced by one marker line."""
    if budget <= 0:
        raise BudgetTooSmall("context budget must be positive")
    header = f"Problem:\n{problem_text}"
    used = estimate_tokens(header)
    if used > budget:
        raise BudgetTooSmall(
            f"problem statement alone needs ~{used} tokens, budget is {budget}"
        )

    rendered = [render_segment(s) for s in segments]
    costs = [estimate_tokens(r) + 1 for r in rendered]  # +1 for the joining newline
    if used + sum(costs) <= budget:
        return "\n\n".join([header] + rendered) if rendered else header

    marker_cost = estimate_tokens(ELISION_MARKER) + 1
    remaining = budget - used - marker_cost
    kept: list[str] = []
    for text, cost in zip(reversed(rendered), reversed(costs)):
        if cost > remaining:
            break
        kept.append(text)
        remaining -= cost
    kept.reverse()
    parts = [header]
    if marker_cost <= budget - used:
        parts.append(ELISION_MARKER)
    parts.extend(kept)
    return "\n\n".join(parts)


def _beam_sort_key(node: TraceNode, reference: PerfProfile | None):
    reward = node.step_reward if node.step_reward is not None else float("-inf")
    fraction = node.pass_fraction
    fraction = -1.0 if fraction is None else fraction
    rel = float("inf")
    if (
        reference is not None
        and node.execution is not None
        and node.execution.profile is not None
    ):
        try:
            rel = relative_time(node.execution.profile, reference)
        except Exception:
            rel = float("inf")
    return (-reward, -fraction, rel, node.id)


def select_beam(
    candidates: Sequence[TraceNode],
    k: int,
    reference: PerfProfile | None = None,
) -> list[TraceNode]:
    """Top-k candidates by (reward, pass fraction, relative time, id)."""
    if not candidates:
        raise ValueError("select_beam requires a non-empty candidate list")
    ranked = sorted(candidates, key=lambda n: _beam_sort_key(n, reference))
    return ranked[: min(k, len(ranked))]


def chain_reward(tree: Tree, node: TraceNode) -> float:
    return tree.chain_reward(node)


def _satisfies_policy(
    policy: CompletionPolicy, report: ExecutionReport | None, reward: float
) -> bool:
    if report is None or not report.valid:
        return False
    if policy.kind == "all_visible_tests_pass":
        return report.tests_total > 0 and report.tests_passed == report.tests_total
    return reward >= float(policy.value)


@dataclass
class _Candidate:
    slot: int
    index: int
    reasoning: str = ""
    code: str = ""
    report: ExecutionReport | None = None
    critique_text: str = ""
    score: float = 0.0
    dropped: bool = False


class SearchEngine:
    """Binds one problem to its gateway, executor and visible tests."""

    def __init__(
        self,
        problem,
        cfg: SearchConfig,
        gateway: ModelGateway,
        executor: ExecutionService,
        visible_tests: Sequence[str],
        store: TreeStore | None = None,
        reference_profile: PerfProfile | None = None,
        max_parallel: int = 1,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.problem = problem
        self.cfg = cfg
        self.gateway = gateway
        self.executor = executor
        self.visible_tests = list(visible_tests)
        self.store = store
        self.reference_profile = reference_profile
        self.max_parallel = max(1, max_parallel)
        self.clock = clock

    # -- expansion --------------------------------------------------------

    def expand(
        self,
        tree: Tree,
        node: TraceNode,
        round_index: int,
        start_index: int = 0,
    ) -> tuple[list[TraceNode], int]:
        """Expand one beam node into at most N children.

        Returns (children, dropped) where dropped counts unparseable
        candidates. Gateway and executor failures propagate.
        """
        if node.complete:
            raise ValueError("cannot expand a complete node")
        cfg = self.cfg
        chain = tree.chain_segments(node)
        context = render_context(self.problem.prompt, chain, cfg.context_budget)
        completions = self.gateway.propose(
            self.problem.id,
            self.problem.prompt,
            context,
            n=cfg.expansion_factor,
            round_index=round_index,
            start_index=start_index,
            max_new_tokens=cfg.generation_budget,
            seed=stable_seed(cfg.rng_seed, self.problem.id, round_index, start_index),
            reasoning=not cfg.ablation.disable_reasoning,
        )

        def evaluate(i_comp) -> _Candidate:
            i, completion = i_comp
            cand = _Candidate(slot=start_index, index=i)
            try:
                reasoning, code = parse_programmer(completion.text)
            except MissingCode:
                cand.dropped = True
                return cand
            if cfg.ablation.disable_reasoning:
                reasoning = ""
            cand.reasoning = reasoning
            cand.code = code

            feedback: str | None = None
            if not cfg.ablation.disable_execution_feedback:
                cand.report = self.executor.execute_candidate(
                    code, self.visible_tests, reference=self.reference_profile
                )
                feedback = cand.report.feedback_text

            step_segments = [
                Segment(REASONING, reasoning, round_index),
                Segment(CODE, code, round_index),
            ]
            critic_context = render_context(
                self.problem.prompt, chain + step_segments, cfg.context_budget
            )
            critique = self.gateway.critique(
                critic_context,
                code,
                feedback,
                problem_id=self.problem.id,
                round_index=round_index,
                index=start_index + i,
                max_new_tokens=cfg.generation_budget,
            )
            cand.critique_text = critique.critique_text
            cand.score = critique.score
            return cand

        items = list(enumerate(completions))
        if self.max_parallel > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
                outcomes = list(pool.map(evaluate, items))
        else:
            outcomes = [evaluate(item) for item in items]

        children: list[TraceNode] = []
        dropped = 0
        for cand in sorted(outcomes, key=lambda c: c.index):
            if cand.dropped:
                dropped += 1
                continue
            segments = [
                Segment(REASONING, cand.reasoning, round_index),
                Segment(CODE, cand.code, round_index),
            ]
            if cand.report is not None:
                segments.append(
                    Segment(EXECUTION_FEEDBACK, cand.report.feedback_text, round_index)
                )
            segments.append(Segment(CRITIQUE, cand.critique_text, round_index))
            complete = _satisfies_policy(cfg.completion_policy, cand.report, cand.score)
            children.append(
                tree.add_child(
                    parent=node,
                    segments=segments,
                    code=cand.code,
                    step_reward=cand.score,
                    execution=cand.report,
                    complete=complete,
                )
            )
        return children, dropped

    # -- main loop ----------------------------------------------------------

    def run(self, resume: bool = False) -> SearchResult:
        cfg = self.cfg
        started = self.clock()

        tree = Tree()
        beam: list[TraceNode] = []
        first_round = 1
        if resume and self.store is not None:
            state = self.store.load()
            if state is not None:
                loaded_tree, beam_ids, last_round = state
                tree = loaded_tree
                beam = [tree.get(i) for i in beam_ids]
                first_round = last_round + 1
                log.info(
                    "resuming %s from round %d (%d nodes)",
                    self.problem.id,
                    first_round,
                    len(tree),
                )
        if not beam:
            root = tree.new_root()
            beam = [root]
            if self.store is not None:
                self.store.write_root(root)

        beam_history: list[list[int]] = []
        rounds_executed = first_round - 1
        total_dropped = 0

        if any(n.complete for n in beam):
            return self._finish(tree, beam_history, rounds_executed, started, total_dropped)

        for round_index in range(first_round, cfg.max_rounds + 1):
            round_children: list[TraceNode] = []
            for slot, node in enumerate(beam):
                children, dropped = self.expand(
                    tree, node, round_index, start_index=slot * cfg.expansion_factor
                )
                round_children.extend(children)
                total_dropped += dropped
            rounds_executed = round_index

            if not round_children:
                partial = self._finish(
                    tree, beam_history, rounds_executed, started, total_dropped
                )
                raise EmptyExpansion(
                    f"round {round_index}: all candidates unparseable", partial=partial
                )

            if self.store is not None:
                for child in round_children:
                    self.store.write_node(round_index, child)
            beam = select_beam(round_children, cfg.beam_width, self.reference_profile)
            beam_ids = [n.id for n in beam]
            beam_history.append(beam_ids)
            if self.store is not None:
                self.store.write_beam(round_index, beam_ids)
            if any(n.complete for n in beam):
                break

        return self._finish(tree, beam_history, rounds_executed, started, total_dropped)

    def _finish(
        self,
        tree: Tree,
        beam_history: list[list[int]],
        rounds_executed: int,
        started: float,
        dropped: int,
    ) -> SearchResult:
        return SearchResult(
            best=pick_best(tree),
            tree=tree,
            rounds_executed=rounds_executed,
            beam_history=beam_history,
            token_usage=self.gateway.usage.to_dict(),
            wall_time=self.clock() - started,
            dropped_candidates=dropped,
        )


def pick_best(tree: Tree) -> TraceNode:
    """Correctness dominates critic opinion: a complete node with the highest
    step reward wins; otherwise the best (pass fraction, reward) pair."""
    nodes = [n for n in tree.nodes() if not n.is_root]
    if not nodes:
        return tree.get(0)
    complete = [n for n in nodes if n.complete]
    if complete:
        return min(
            complete,
            key=lambda n: (-(n.step_reward or 0.0), -(n.pass_fraction or 0.0), n.id),
        )
    return min(
        nodes,
        key=lambda n: (
            -(n.pass_fraction if n.pass_fraction is not None else -1.0),
            -(n.step_reward or 0.0),
            n.id,
        ),
    )


def run_search(
    problem,
    cfg: SearchConfig,
    gateway: ModelGateway,
    executor: ExecutionService,
    visible_tests: Sequence[str] | None = None,
    store: TreeStore | None = None,
    reference_profile: PerfProfile | None = None,
    max_parallel: int = 1,
    clock: Callable[[], float] = time.monotonic,
    resume: bool = False,
) -> SearchResult:
    """Run the full search for one problem and return the best chain."""
    if visible_tests is None:
        visible_tests = list(getattr(problem, "visible_tests", []) or [])
    needs_tests = (
        cfg.completion_policy.kind == "all_visible_tests_pass"
        and not cfg.ablation.disable_execution_feedback
    )
    if needs_tests and not visible_tests:
        raise ValueError(
            "completion policy all_visible_tests_pass requires at least one visible test"
        )
    engine = SearchEngine(
        problem,
        cfg,
        gateway,
        executor,
        visible_tests,
        store=store,
        reference_profile=reference_profile,
        max_parallel=max_parallel,
        clock=clock,
    )
    return engine.run(resume=resume)
