"""Configuration objects and the flags > env > file > defaults resolution."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

DEFAULT_BEAM_WIDTH = 3
DEFAULT_MAX_ROUNDS = 5
DEFAULT_EXPANSION_FACTOR = 20
DEFAULT_CONTEXT_BUDGET = 18_000
DEFAULT_GENERATION_BUDGET = 1_500

DEFAULT_CPU_SECONDS = 5.0
DEFAULT_MEMORY_BYTES = 512 * 1024 * 1024
DEFAULT_MAX_TESTS = 15

ENV_API_KEY = "ORPS_API_KEY"
ENV_BASE_URL = "ORPS_BASE_URL"
ENV_MODEL = "ORPS_MODEL"


@dataclass(frozen=True)
class CompletionPolicy:
    """When a search node counts as complete.

    ``all_visible_tests_pass`` requires a valid program passing every visible
    test; ``reward_threshold`` requires a critic score of at least ``value``
    (execution must still have happened for the node to complete).
    """

    kind: str = "all_visible_tests_pass"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("all_visible_tests_pass", "reward_threshold"):
            raise ConfigError(f"unknown completion policy: {self.kind!r}")
        if self.kind == "reward_threshold" and self.value is None:
            raise ConfigError("reward_threshold policy needs a value")


@dataclass(frozen=True)
class AblationFlags:
    disable_execution_feedback: bool = False
    disable_reasoning: bool = False


@dataclass(frozen=True)
class SearchConfig:
    """Budgets and policy for one beam search run."""

    beam_width: int = DEFAULT_BEAM_WIDTH
    max_rounds: int = DEFAULT_MAX_ROUNDS
    expansion_factor: int = DEFAULT_EXPANSION_FACTOR
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    generation_budget: int = DEFAULT_GENERATION_BUDGET
    completion_policy: CompletionPolicy = field(default_factory=CompletionPolicy)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    rng_seed: int = 0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.expansion_factor < 1:
            raise ConfigError("expansion_factor must be >= 1")
        if self.context_budget <= 0 or self.generation_budget <= 0:
            raise ConfigError("token budgets must be positive")
        if self.generation_budget > self.context_budget:
            raise ConfigError("generation_budget must not exceed context_budget")


@dataclass(frozen=True)
class ResourceLimits:
    cpu_seconds: float = DEFAULT_CPU_SECONDS
    memory_bytes: int = DEFAULT_MEMORY_BYTES
    max_tests: int = DEFAULT_MAX_TESTS

    def __post_init__(self):
        if self.cpu_seconds <= 0 or self.memory_bytes <= 0:
            raise ConfigError("resource limits must be positive")
        if self.max_tests < 1:
            raise ConfigError("max_tests must be >= 1")


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "local-model"
    api_key: str = ""
    programmer_temperature: float = 0.7
    critic_temperature: float = 0.2
    score_min: float = 1.0
    score_max: float = 10.0
    retry_budget: int = 3
    retry_backoff_s: float = 1.0
    timeout_s: float = 120.0

    def __post_init__(self):
        if not self.score_min < self.score_max:
            raise ConfigError("score_min must be < score_max")
        if self.retry_budget < 0:
            raise ConfigError("retry_budget must be >= 0")


@dataclass(frozen=True)
class AppConfig:
    """Everything a run needs, resolved from all configuration layers."""

    search: SearchConfig = field(default_factory=SearchConfig)
    limits: ResourceLimits = field(default_factory=ResourceLimits)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    runner_cmd: list[str] = field(default_factory=list)
    max_parallel: int = 0  # 0 = number of CPUs
    self_test_count: int = 5
    out_dir: str = "runs"

    def resolved_parallelism(self) -> int:
        if self.max_parallel > 0:
            return self.max_parallel
        return os.cpu_count() or 1


def _require_mapping(obj: Any, where: str) -> Mapping:
    if obj is None:
        return {}
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where} must be a mapping, got {type(obj).__name__}")
    return obj


def load_config_file(path: str | Path) -> AppConfig:
    """Parse a YAML config file into an AppConfig."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}")
    return config_from_dict(_require_mapping(raw, "config file"))


def config_from_dict(data: Mapping) -> AppConfig:
    search_raw = dict(_require_mapping(data.get("search"), "search"))
    limits_raw = dict(_require_mapping(data.get("limits"), "limits"))
    gateway_raw = dict(_require_mapping(data.get("gateway"), "gateway"))

    policy = search_raw.pop("completion_policy", None)
    if isinstance(policy, str):
        search_raw["completion_policy"] = CompletionPolicy(kind=policy)
    elif isinstance(policy, Mapping):
        search_raw["completion_policy"] = CompletionPolicy(
            kind=policy.get("kind", "all_visible_tests_pass"),
            value=policy.get("value"),
        )
    ablation = search_raw.pop("ablation", None)
    if isinstance(ablation, Mapping):
        search_raw["ablation"] = AblationFlags(
            disable_execution_feedback=bool(ablation.get("disable_execution_feedback", False)),
            disable_reasoning=bool(ablation.get("disable_reasoning", False)),
        )

    try:
        search = SearchConfig(**search_raw)
        limits = ResourceLimits(**limits_raw)
        gateway = GatewayConfig(**gateway_raw)
    except TypeError as exc:
        raise ConfigError(f"unknown config key: {exc}")

    runner_cmd = data.get("runner_cmd", [])
    if isinstance(runner_cmd, str):
        runner_cmd = runner_cmd.split()
    return AppConfig(
        search=search,
        limits=limits,
        gateway=gateway,
        runner_cmd=list(runner_cmd),
        max_parallel=int(data.get("max_parallel", 0)),
        self_test_count=int(data.get("self_test_count", 5)),
        out_dir=str(data.get("out_dir", "runs")),
    )


def apply_env(cfg: AppConfig, env: Mapping[str, str] | None = None) -> AppConfig:
    """Overlay environment variables (middle precedence layer)."""
    env = os.environ if env is None else env
    gw = cfg.gateway
    if env.get(ENV_API_KEY):
        gw = replace(gw, api_key=env[ENV_API_KEY])
    if env.get(ENV_BASE_URL):
        gw = replace(gw, base_url=env[ENV_BASE_URL])
    if env.get(ENV_MODEL):
        gw = replace(gw, model=env[ENV_MODEL])
    return replace(cfg, gateway=gw)


def apply_flags(cfg: AppConfig, flags: Mapping[str, Any]) -> AppConfig:
    """Overlay command-line flags (highest precedence). Unset flags are None."""
    search = cfg.search
    updates = {}
    for flag, attr in (
        ("beam_width", "beam_width"),
        ("rounds", "max_rounds"),
        ("samples", "expansion_factor"),
        ("seed", "rng_seed"),
    ):
        if flags.get(flag) is not None:
            updates[attr] = flags[flag]
    if updates:
        search = replace(search, **updates)
    cfg = replace(cfg, search=search)
    if flags.get("max_parallel") is not None:
        cfg = replace(cfg, max_parallel=flags["max_parallel"])
    if flags.get("out") is not None:
        cfg = replace(cfg, out_dir=flags["out"])
    if flags.get("model") is not None:
        cfg = replace(cfg, gateway=replace(cfg.gateway, model=flags["model"]))
    return cfg


def resolve_config(
    config_path: str | None,
    flags: Mapping[str, Any],
    env: Mapping[str, str] | None = None,
) -> AppConfig:
    """Full precedence chain: defaults < config file < environment < flags."""
    cfg = load_config_file(config_path) if config_path else AppConfig()
    cfg = apply_env(cfg, env)
    return apply_flags(cfg, flags)
