"""Reasoning-tree state: segments, trace nodes, and on-disk persistence.

One JSON document per node under ``<problem_dir>/round_<t>/node_<id>.json``
plus a per-round ``beam.json`` snapshot; resume loads the latest round whose
beam snapshot exists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .executor import ExecutionReport, PerfProfile
from .runner_protocol import PerTest, StaticMetrics
from .util import canonical_json

REASONING = "reasoning"
CODE = "code"
EXECUTION_FEEDBACK = "execution_feedback"
CRITIQUE = "critique"
SEGMENT_KINDS = (REASONING, CODE, EXECUTION_FEEDBACK, CRITIQUE)


@dataclass(frozen=True)
class Segment:
    kind: str
    text: str
    round: int

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")


@dataclass(frozen=True)
class TraceNode:
    """One state on the reasoning tree. Immutable after creation.

    ``segments`` holds only the segments added by this node's step; the full
    chain is reconstructed by walking parent links (see Tree.chain_segments).
    """

    id: int
    parent: int | None
    depth: int
    segments: tuple[Segment, ...] = ()
    code: str = ""
    step_reward: float | None = None
    execution: ExecutionReport | None = None
    complete: bool = False

    @property
    def is_root(self) -> bool:
        return self.parent is None

    @property
    def pass_fraction(self) -> float | None:
        if self.execution is None:
            return None
        return self.execution.pass_fraction

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "parent": self.parent,
            "depth": self.depth,
            "segments": [
                {"kind": s.kind, "text": s.text, "round": s.round} for s in self.segments
            ],
            "code": self.code,
            "step_reward": self.step_reward,
            "execution": None if self.execution is None else self.execution.to_dict(),
            "complete": self.complete,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "TraceNode":
        execution = None
        if data.get("execution") is not None:
            execution = _execution_from_dict(data["execution"])
        return TraceNode(
            id=int(data["id"]),
            parent=data["parent"],
            depth=int(data["depth"]),
            segments=tuple(
                Segment(kind=s["kind"], text=s["text"], round=int(s["round"]))
                for s in data.get("segments", [])
            ),
            code=data.get("code", ""),
            step_reward=data.get("step_reward"),
            execution=execution,
            complete=bool(data.get("complete", False)),
        )


def _execution_from_dict(data: dict[str, Any]) -> ExecutionReport:
    static = None
    if data.get("static") is not None:
        static = StaticMetrics(**data["static"])
    profile = None
    if data.get("profile") is not None:
        profile = PerfProfile(**data["profile"])
    return ExecutionReport(
        valid=bool(data["valid"]),
        tests_total=int(data["tests_total"]),
        tests_passed=int(data["tests_passed"]),
        per_test=[PerTest(**t) for t in data.get("per_test", [])],
        static=static,
        profile=profile,
        feedback_text=data.get("feedback_text", ""),
        load_message=data.get("load_message", ""),
        truncated_tests=int(data.get("truncated_tests", 0)),
    )


class Tree:
    """All nodes of one search, addressable by id; ids are creation order."""

    def __init__(self):
        self._nodes: dict[int, TraceNode] = {}
        self._next_id = 0

    def new_root(self) -> TraceNode:
        root = TraceNode(id=self._allocate_id(), parent=None, depth=0)
        self._nodes[root.id] = root
        return root

    def _allocate_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def add_child(
        self,
        parent: TraceNode,
        segments: Iterable[Segment],
        code: str,
        step_reward: float,
        execution: ExecutionReport | None,
        complete: bool,
    ) -> TraceNode:
        node = TraceNode(
            id=self._allocate_id(),
            parent=parent.id,
            depth=parent.depth + 1,
            segments=tuple(segments),
            code=code,
            step_reward=step_reward,
            execution=execution,
            complete=complete,
        )
        self._nodes[node.id] = node
        return node

    def restore(self, node: TraceNode) -> None:
        self._nodes[node.id] = node
        self._next_id = max(self._next_id, node.id + 1)

    def get(self, node_id: int) -> TraceNode:
        return self._nodes[node_id]

    def nodes(self) -> list[TraceNode]:
        return [self._nodes[i] for i in sorted(self._nodes)]

    def __len__(self) -> int:
        return len(self._nodes)

    def path_to_root(self, node: TraceNode) -> list[TraceNode]:
        """Nodes from the root (exclusive) down to ``node`` (inclusive)."""
        path = []
        current: TraceNode | None = node
        while current is not None and not current.is_root:
            path.append(current)
            current = self._nodes.get(current.parent) if current.parent is not None else None
        path.reverse()
        return path

    def chain_segments(self, node: TraceNode) -> list[Segment]:
        segments: list[Segment] = []
        for step in self.path_to_root(node):
            segments.extend(step.segments)
        return segments

    def chain_reward(self, node: TraceNode) -> float:
        """Sum of step rewards along the path, root excluded."""
        if node.is_root:
            raise ValueError("chain_reward is undefined for the root")
        return sum(step.step_reward or 0.0 for step in self.path_to_root(node))


@dataclass
class SearchResult:
    best: TraceNode
    tree: Tree
    rounds_executed: int
    beam_history: list[list[int]] = field(default_factory=list)
    token_usage: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0
    dropped_candidates: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "best": self.best.id,
            "rounds_executed": self.rounds_executed,
            "beam_history": self.beam_history,
            "token_usage": self.token_usage,
            "wall_time": self.wall_time,
            "dropped_candidates": self.dropped_candidates,
            "nodes": [n.to_dict() for n in self.tree.nodes()],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


class TreeStore:
    """Writes node/beam documents for one problem's search directory."""

    def __init__(self, problem_dir: str | Path):
        self.problem_dir = Path(problem_dir)

    def round_dir(self, round_index: int) -> Path:
        return self.problem_dir / f"round_{round_index}"

    def write_node(self, round_index: int, node: TraceNode) -> None:
        rdir = self.round_dir(round_index)
        rdir.mkdir(parents=True, exist_ok=True)
        path = rdir / f"node_{node.id}.json"
        path.write_text(canonical_json(node.to_dict()), encoding="utf-8")

    def write_beam(self, round_index: int, beam_ids: list[int]) -> None:
        rdir = self.round_dir(round_index)
        rdir.mkdir(parents=True, exist_ok=True)
        (rdir / "beam.json").write_text(
            canonical_json({"round": round_index, "beam": beam_ids}), encoding="utf-8"
        )

    def write_root(self, root: TraceNode) -> None:
        self.write_node(0, root)
        self.write_beam(0, [root.id])

    def latest_complete_round(self) -> int | None:
        """Highest round index with a beam snapshot, or None if nothing saved."""
        rounds = []
        if not self.problem_dir.is_dir():
            return None
        for entry in self.problem_dir.iterdir():
            if entry.is_dir() and entry.name.startswith("round_"):
                if (entry / "beam.json").is_file():
                    try:
                        rounds.append(int(entry.name.split("_", 1)[1]))
                    except ValueError:
                        continue
        return max(rounds) if rounds else None

    def load(self) -> tuple[Tree, list[int], int] | None:
        """Rebuild (tree, beam ids, round) from the latest complete round."""
        last = self.latest_complete_round()
        if last is None:
            return None
        tree = Tree()
        for round_index in range(last + 1):
            rdir = self.round_dir(round_index)
            if not rdir.is_dir():
                continue
            for node_file in sorted(rdir.glob("node_*.json")):
                node = TraceNode.from_dict(
                    json.loads(node_file.read_text(encoding="utf-8"))
                )
                tree.restore(node)
        beam_doc = json.loads(
            (self.round_dir(last) / "beam.json").read_text(encoding="utf-8")
        )
        return tree, list(beam_doc["beam"]), last
