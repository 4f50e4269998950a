"""Chat-model gateway: programmer, critic and test-writer roles.

Two interchangeable backends sit behind :class:`ModelGateway`: an
OpenAI-compatible HTTP client with retries, and a scripted playback backend
that replays stored completions keyed by (problem, role, round, index) for
fully offline, deterministic runs.
"""

from __future__ import annotations

import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import requests

from .config import GatewayConfig, ResourceLimits
from .errors import (
    ContextOverflow,
    GatewayUnavailable,
    MalformedScore,
    MissingCode,
    NoValidTests,
)
from .runner_protocol import PASS
from .util import estimate_tokens

log = logging.getLogger(__name__)

PROGRAMMER = "programmer"
CRITIC = "critic"
TEST_WRITER = "test_writer"

THOUGHTS_MARKER = "=== Programmer Thoughts ==="
SOLUTION_MARKER = "=== Solution ==="
CRITIC_MARKER = "=== Critic Thoughts ==="
SCORE_MARKER = "=== Score ==="

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_SCORE_RE = re.compile(r"\$\$(.*?)\$\$", re.DOTALL)


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0


@dataclass(frozen=True)
class ParsedCritique:
    critique_text: str
    score: float


@dataclass
class Usage:
    """Token and call accounting, safe for concurrent expansion workers."""

    prompt_tokens: int = 0
    completion_tokens: int = 0
    requests: int = 0
    completions_by_role: dict[str, int] = field(default_factory=dict)
    anomalies: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, role: str, completions: Sequence[Completion]) -> None:
        with self._lock:
            self.requests += 1
            if completions:
                self.prompt_tokens += completions[0].prompt_tokens
            self.completion_tokens += sum(c.completion_tokens for c in completions)
            self.completions_by_role[role] = (
                self.completions_by_role.get(role, 0) + len(completions)
            )

    def record_anomaly(self) -> None:
        with self._lock:
            self.anomalies += 1

    @property
    def total_completions(self) -> int:
        return sum(self.completions_by_role.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "requests": self.requests,
            "completions_by_role": dict(sorted(self.completions_by_role.items())),
            "anomalies": self.anomalies,
        }


# ---------------------------------------------------------------------------
# Output parsing


def parse_programmer(text: str) -> tuple[str, str]:
    """Split a programmer completion into (reasoning, code).

    The code is the body of the last fenced block, or everything after the
    solution marker when no fence exists. Raises MissingCode when neither
    yields anything.
    """
    blocks = _FENCE_RE.findall(text)
    if blocks:
        code = blocks[-1].strip()
    else:
        _, sep, after = text.partition(SOLUTION_MARKER)
        code = after.strip() if sep else ""
    if not code:
        raise MissingCode("completion contains no code block or solution section")

    if THOUGHTS_MARKER in text:
        after_thoughts = text.split(THOUGHTS_MARKER, 1)[1]
        if SOLUTION_MARKER in after_thoughts:
            reasoning = after_thoughts.split(SOLUTION_MARKER, 1)[0]
        else:
            reasoning = _FENCE_RE.split(after_thoughts, 1)[0]
    else:
        # No markers: treat everything before the first fence as reasoning.
        reasoning = _FENCE_RE.split(text, 1)[0]
        if SOLUTION_MARKER in reasoning:
            reasoning = reasoning.split(SOLUTION_MARKER, 1)[0]
    return reasoning.strip(), code


def parse_score(text: str, score_min: float, score_max: float) -> float:
    """Return the last ``$$...$$`` group parseable as a number, clamped."""
    for group in reversed(_SCORE_RE.findall(text)):
        try:
            value = float(group.strip())
        except ValueError:
            continue
        if value != value or value in (float("inf"), float("-inf")):
            continue
        return min(max(value, score_min), score_max)
    raise MalformedScore("no parseable $$...$$ score group")


def extract_test_candidates(text: str) -> list[str]:
    """One assertion-style test per fenced block, else per assert line."""
    blocks = [b.strip() for b in _FENCE_RE.findall(text) if b.strip()]
    if blocks:
        return blocks
    return [
        line.strip()
        for line in text.splitlines()
        if line.strip().startswith("assert")
    ]


# ---------------------------------------------------------------------------
# Prompt templates


@dataclass(frozen=True)
class RoleTemplate:
    role: str
    system_text: str


PROGRAMMER_TEMPLATE = RoleTemplate(
    role=PROGRAMMER,
    system_text=(
        "You are an expert programmer solving a hard problem in Python. "
        "Think about the algorithm, its complexity and edge cases before writing code.\n"
        f"Answer in exactly this format: a section headed '{THOUGHTS_MARKER}' with your "
        f"step-by-step reasoning, then a section headed '{SOLUTION_MARKER}' containing the "
        "complete final program in a single fenced code block."
    ),
)

PROGRAMMER_CODE_ONLY_TEMPLATE = RoleTemplate(
    role=PROGRAMMER,
    system_text=(
        "You are an expert programmer solving a hard problem in Python. "
        f"Answer with a section headed '{SOLUTION_MARKER}' containing only the complete "
        "final program in a single fenced code block. Do not explain your approach."
    ),
)

CRITIC_TEMPLATE = RoleTemplate(
    role=CRITIC,
    system_text=(
        "You are a rigorous reviewer of program candidates. Judge the latest step of the "
        "reasoning chain: the soundness of the reasoning, the quality and efficiency of the "
        "implementation, and what the execution results reveal.\n"
        f"Answer in exactly this format: a section headed '{CRITIC_MARKER}' with your "
        f"analysis, then a section headed '{SCORE_MARKER}' containing your score as "
        "$$N$$ where N is an integer between {score_min} and {score_max} "
        "({score_min} = fundamentally broken, {score_max} = correct and efficient)."
    ),
)

TEST_WRITER_TEMPLATE = RoleTemplate(
    role=TEST_WRITER,
    system_text=(
        "You write unit tests for a programming problem before seeing any solution. "
        "Each test must be a single self-contained Python assert statement exercising the "
        "required behaviour. Put every test in its own fenced code block. "
        "Write at most {count} tests."
    ),
)


def build_programmer_messages(problem_text: str, context_text: str, reasoning: bool = True) -> list[dict[str, str]]:
    template = PROGRAMMER_TEMPLATE if reasoning else PROGRAMMER_CODE_ONLY_TEMPLATE
    return [
        {"role": "system", "content": template.system_text},
        {"role": "user", "content": context_text or problem_text},
    ]


def build_critic_messages(
    chain_context: str,
    code: str,
    feedback: str | None,
    score_min: float,
    score_max: float,
) -> list[dict[str, str]]:
    system = CRITIC_TEMPLATE.system_text.format(
        score_min=int(score_min), score_max=int(score_max)
    )
    parts = [chain_context, "Candidate program:\n```\n" + code + "\n```"]
    if feedback is not None:
        parts.append("Execution report:\n" + feedback)
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": "\n\n".join(parts)},
    ]


def build_test_writer_messages(problem_text: str, count: int) -> list[dict[str, str]]:
    return [
        {"role": "system", "content": TEST_WRITER_TEMPLATE.system_text.format(count=count)},
        {"role": "user", "content": problem_text},
    ]


def _prompt_tokens(messages: Sequence[dict[str, str]]) -> int:
    return sum(estimate_tokens(m.get("content", "")) for m in messages)


# ---------------------------------------------------------------------------
# Backends


@dataclass(frozen=True)
class ScriptKey:
    """Addresses scripted completions: candidate `index` is the position of
    the candidate within its round (beam slot * expansion factor + sample)."""

    problem_id: str
    role: str
    round: int
    index: int


class HttpChatBackend:
    """OpenAI-compatible /chat/completions client with bounded retries."""

    def __init__(self, cfg: GatewayConfig, transport: Callable[..., Any] | None = None):
        self.cfg = cfg
        self._post = transport or requests.post

    def complete(
        self,
        messages: Sequence[dict[str, str]],
        n: int,
        max_new_tokens: int,
        temperature: float,
        seed: int | None = None,
        keys: Sequence[ScriptKey] | None = None,
    ) -> list[Completion]:
        payload = {
            "model": self.cfg.model,
            "messages": list(messages),
            "n": n,
            "max_tokens": max_new_tokens,
            "temperature": temperature,
        }
        if seed is not None:
            payload["seed"] = seed
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"

        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        attempts = self.cfg.retry_budget + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.cfg.retry_backoff_s * 2 ** (attempt - 1))
            started = time.monotonic()
            try:
                response = self._post(url, json=payload, headers=headers, timeout=self.cfg.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                log.warning("chat request failed (attempt %d/%d): %s", attempt + 1, attempts, exc)
                continue
            latency_ms = (time.monotonic() - started) * 1000.0
            if response.status_code >= 500:
                last_error = GatewayUnavailable(f"server error {response.status_code}")
                continue
            if response.status_code == 400 and "context" in response.text.lower():
                raise ContextOverflow(response.text[:300])
            if response.status_code != 200:
                raise GatewayUnavailable(
                    f"endpoint rejected request ({response.status_code}): {response.text[:300]}"
                )
            return self._parse_response(response.json(), messages, latency_ms, max_new_tokens)
        raise GatewayUnavailable(f"retry budget exhausted: {last_error}")

    def _parse_response(
        self,
        body: dict[str, Any],
        messages: Sequence[dict[str, str]],
        latency_ms: float,
        max_new_tokens: int,
    ) -> list[Completion]:
        usage = body.get("usage", {})
        prompt_tokens = int(usage.get("prompt_tokens", _prompt_tokens(messages)))
        choices = body.get("choices", [])
        if not choices:
            raise GatewayUnavailable("endpoint returned no choices")
        total_completion = usage.get("completion_tokens")
        completions = []
        for i, choice in enumerate(choices):
            text = (choice.get("message") or {}).get("content") or choice.get("text") or ""
            if total_completion is not None:
                ctok = int(total_completion) // len(choices)
            else:
                ctok = estimate_tokens(text)
            completions.append(
                Completion(
                    text=text,
                    prompt_tokens=prompt_tokens if i == 0 else 0,
                    completion_tokens=min(ctok, max_new_tokens),
                    latency_ms=latency_ms,
                )
            )
        return completions


class ScriptedBackend:
    """Replays stored completions from a directory tree.

    Lookup order for key (problem, role, round, index):

    1. ``<root>/<problem>/<role>_r<round>_i<index>.txt``
    2. ``<root>/<problem>/<role>_default.txt``
    3. ``<root>/<role>_r<round>_i<index>.txt``
    4. ``<root>/<role>_default.txt``

    Identical keys always return identical texts; missing keys raise
    GatewayUnavailable.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise GatewayUnavailable(f"scripted model directory not found: {root}")
        self._cache: dict[Path, str] = {}

    def _read(self, path: Path) -> str | None:
        if path in self._cache:
            return self._cache[path]
        if not path.is_file():
            return None
        text = path.read_text(encoding="utf-8")
        self._cache[path] = text
        return text

    def _lookup(self, key: ScriptKey) -> str:
        specific = f"{key.role}_r{key.round}_i{key.index}.txt"
        fallback = f"{key.role}_default.txt"
        for path in (
            self.root / key.problem_id / specific,
            self.root / key.problem_id / fallback,
            self.root / specific,
            self.root / fallback,
        ):
            text = self._read(path)
            if text is not None:
                return text
        raise GatewayUnavailable(f"no scripted response for {key}")

    def complete(
        self,
        messages: Sequence[dict[str, str]],
        n: int,
        max_new_tokens: int,
        temperature: float,
        seed: int | None = None,
        keys: Sequence[ScriptKey] | None = None,
    ) -> list[Completion]:
        if not keys or len(keys) != n:
            raise GatewayUnavailable("scripted backend requires one key per completion")
        prompt_tokens = _prompt_tokens(messages)
        completions = []
        for i, key in enumerate(keys):
            text = self._lookup(key)
            completions.append(
                Completion(
                    text=text,
                    prompt_tokens=prompt_tokens if i == 0 else 0,
                    completion_tokens=min(estimate_tokens(text), max_new_tokens),
                    latency_ms=0.0,
                )
            )
        return completions


# ---------------------------------------------------------------------------
# Gateway


class ModelGateway:
    """Role-level API over a chat backend, with per-instance usage counters.

    Create one instance per problem (sharing the backend) so budget
    accounting stays per-problem even when problems run concurrently.
    """

    def __init__(self, backend, cfg: GatewayConfig):
        self.backend = backend
        self.cfg = cfg
        self.usage = Usage()

    def scoped(self) -> "ModelGateway":
        return ModelGateway(self.backend, self.cfg)

    def complete_chat(
        self,
        messages: Sequence[dict[str, str]],
        n: int = 1,
        max_new_tokens: int | None = None,
        temperature: float = 0.7,
        seed: int | None = None,
        role: str = PROGRAMMER,
        keys: Sequence[ScriptKey] | None = None,
    ) -> list[Completion]:
        if n < 1:
            raise ValueError("n must be >= 1")
        if not messages:
            raise ValueError("messages must be non-empty")
        completions = self.backend.complete(
            messages,
            n=n,
            max_new_tokens=max_new_tokens or 1024,
            temperature=temperature,
            seed=seed,
            keys=keys,
        )
        self.usage.record(role, completions)
        return completions

    def propose(
        self,
        problem_id: str,
        problem_text: str,
        context_text: str,
        n: int,
        round_index: int,
        start_index: int,
        max_new_tokens: int,
        seed: int | None = None,
        reasoning: bool = True,
    ) -> list[Completion]:
        messages = build_programmer_messages(problem_text, context_text, reasoning)
        keys = [
            ScriptKey(problem_id, PROGRAMMER, round_index, start_index + i)
            for i in range(n)
        ]
        return self.complete_chat(
            messages,
            n=n,
            max_new_tokens=max_new_tokens,
            temperature=self.cfg.programmer_temperature,
            seed=seed,
            role=PROGRAMMER,
            keys=keys,
        )

    def critique(
        self,
        chain_context: str,
        code: str,
        feedback: str | None,
        problem_id: str = "",
        round_index: int = 1,
        index: int = 0,
        max_new_tokens: int | None = None,
    ) -> ParsedCritique:
        """Score one candidate step; falls back to score_min after two
        malformed-score completions."""
        if not chain_context or not code:
            raise ValueError("chain_context and code must be non-empty")
        messages = build_critic_messages(
            chain_context, code, feedback, self.cfg.score_min, self.cfg.score_max
        )
        keys = [ScriptKey(problem_id, CRITIC, round_index, index)]
        last_text = ""
        for _ in range(2):
            completions = self.complete_chat(
                messages,
                n=1,
                max_new_tokens=max_new_tokens,
                temperature=self.cfg.critic_temperature,
                role=CRITIC,
                keys=keys,
            )
            last_text = completions[0].text
            try:
                score = parse_score(last_text, self.cfg.score_min, self.cfg.score_max)
                return ParsedCritique(critique_text=last_text.strip(), score=score)
            except MalformedScore:
                continue
        self.usage.record_anomaly()
        log.warning("critic returned malformed scores twice; assigning score_min")
        return ParsedCritique(critique_text=last_text.strip(), score=self.cfg.score_min)

    def generate_tests(
        self,
        problem,
        count: int,
        executor,
        limits: ResourceLimits | None = None,
    ) -> list[str]:
        """Self-generate visible tests once per problem, before round 1."""
        if count < 1:
            raise ValueError("count must be >= 1")
        lim = limits or executor.limits
        existing = list(getattr(problem, "visible_tests", []) or [])
        allowed = min(count, lim.max_tests - len(existing))
        if allowed <= 0:
            return []

        messages = build_test_writer_messages(problem.prompt, count)
        completions = self.complete_chat(
            messages,
            n=1,
            max_new_tokens=1024,
            temperature=self.cfg.critic_temperature,
            role=TEST_WRITER,
            keys=[ScriptKey(problem.id, TEST_WRITER, 0, 0)],
        )
        candidates = extract_test_candidates(completions[0].text)
        seen: set[str] = set(existing)
        deduped = []
        for test in candidates:
            if test not in seen:
                seen.add(test)
                deduped.append(test)
        if not deduped:
            raise NoValidTests("test writer produced no assertion candidates")

        check = executor.check_tests("", deduped, limits=lim)
        valid = [
            test
            for test, result in zip(deduped, check.per_test)
            if result.status == PASS
        ]
        if not valid:
            raise NoValidTests("no generated test survived syntax validation")
        return valid[:allowed]
