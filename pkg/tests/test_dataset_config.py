from __future__ import annotations

import json

import pytest

from orps.config import (
    AppConfig,
    CompletionPolicy,
    ResourceLimits,
    SearchConfig,
    apply_env,
    apply_flags,
    load_config_file,
    resolve_config,
)
from orps.dataset import import_problems, load_problems, save_problems
from orps.errors import ConfigError, DatasetError


# ---------------------------------------------------------------------------
# dataset ingestion


def _write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


def test_load_problems_roundtrip(tmp_path):
    rows = [
        {
            "id": "p1",
            "prompt": "sum it",
            "visible_tests": ["assert solve([1]) == 1"],
            "hidden_tests": ["assert solve([2]) == 2"],
            "reference_solution": "def solve(v):\n    return sum(v)\n",
            "tags": ["arrays"],
        }
    ]
    path = tmp_path / "d.jsonl"
    _write_jsonl(path, rows)
    problems = load_problems(path)
    assert problems[0].id == "p1"
    assert problems[0].tags == ["arrays"]

    out = tmp_path / "copy.jsonl"
    save_problems(problems, out)
    assert load_problems(out) == problems


def test_load_problems_rejects_duplicates_and_garbage(tmp_path):
    path = tmp_path / "d.jsonl"
    _write_jsonl(path, [{"id": "a", "prompt": "x"}, {"id": "a", "prompt": "y"}])
    with pytest.raises(DatasetError):
        load_problems(path)
    path.write_text("not json\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        load_problems(path)
    with pytest.raises(DatasetError):
        load_problems(tmp_path / "missing.jsonl")


def test_import_humaneval_layout(tmp_path):
    path = tmp_path / "he.jsonl"
    _write_jsonl(
        path,
        [
            {
                "task_id": "HumanEval/0",
                "prompt": "def add(a, b):\n    \"\"\"Add.\"\"\"\n",
                "canonical_solution": "    return a + b\n",
                "test": "def check(candidate):\n    assert candidate(1, 1) == 2\n",
                "entry_point": "add",
            }
        ],
    )
    records = import_problems(path, "humaneval")
    assert records[0].id == "HumanEval/0"
    assert records[0].entry_point == "add"
    assert "check(add)" in records[0].hidden_tests[0]
    assert records[0].reference_solution.endswith("return a + b\n")


def test_import_mbpp_layout(tmp_path):
    path = tmp_path / "mbpp.jsonl"
    _write_jsonl(
        path,
        [
            {
                "task_id": 11,
                "text": "Write a function to sum two numbers.",
                "code": "def add(a, b):\n    return a + b\n",
                "test_list": ["assert add(1, 2) == 3"],
                "test_setup_code": "",
            }
        ],
    )
    records = import_problems(path, "mbpp")
    assert records[0].id == "11"
    assert records[0].hidden_tests == ["assert add(1, 2) == 3"]


def test_import_unknown_format(tmp_path):
    with pytest.raises(DatasetError):
        import_problems(tmp_path / "x.jsonl", "nope")


# ---------------------------------------------------------------------------
# configuration


def test_search_config_defaults_match_documented_values():
    cfg = SearchConfig()
    assert cfg.beam_width == 3
    assert cfg.max_rounds == 5
    assert cfg.expansion_factor == 20
    assert cfg.context_budget == 18_000
    assert cfg.generation_budget == 1_500
    limits = ResourceLimits()
    assert limits.cpu_seconds == 5.0
    assert limits.memory_bytes == 512 * 1024 * 1024
    assert limits.max_tests == 15


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        SearchConfig(beam_width=0)
    with pytest.raises(ConfigError):
        SearchConfig(generation_budget=10_000_000)
    with pytest.raises(ConfigError):
        CompletionPolicy("reward_threshold")
    with pytest.raises(ConfigError):
        CompletionPolicy("nonsense")


def test_load_config_file_and_policy(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        """
search:
  beam_width: 2
  max_rounds: 4
  completion_policy:
    kind: reward_threshold
    value: 8
  ablation:
    disable_reasoning: true
limits:
  cpu_seconds: 2
gateway:
  model: test-model
runner_cmd: "python3 runner.py --flag"
max_parallel: 2
""",
        encoding="utf-8",
    )
    cfg = load_config_file(path)
    assert cfg.search.beam_width == 2
    assert cfg.search.completion_policy.kind == "reward_threshold"
    assert cfg.search.completion_policy.value == 8
    assert cfg.search.ablation.disable_reasoning
    assert cfg.limits.cpu_seconds == 2
    assert cfg.gateway.model == "test-model"
    assert cfg.runner_cmd == ["python3", "runner.py", "--flag"]
    assert cfg.max_parallel == 2


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("search:\n  beem_width: 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(path)


def test_precedence_flags_env_file_defaults(tmp_path):
    # One override at each level: the file overrides a default, the
    # environment overrides the file, a flag overrides everything.
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "search:\n  beam_width: 7\ngateway:\n  model: from-file\n", encoding="utf-8"
    )
    env = {"ORPS_MODEL": "from-env", "ORPS_API_KEY": "sk-env"}

    resolved = resolve_config(str(path), {"beam_width": 2}, env)
    assert resolved.search.beam_width == 2  # flag wins
    assert resolved.gateway.model == "from-env"  # env beats file
    assert resolved.gateway.api_key == "sk-env"  # env beats default
    assert resolved.search.max_rounds == 5  # untouched default

    no_flags = resolve_config(str(path), {}, {})
    assert no_flags.search.beam_width == 7  # file beats default
    assert no_flags.gateway.model == "from-file"


def test_apply_env_and_flags_are_pure():
    base = AppConfig()
    with_env = apply_env(base, {"ORPS_API_KEY": "k"})
    assert base.gateway.api_key == ""
    assert with_env.gateway.api_key == "k"
    with_flags = apply_flags(base, {"seed": 99})
    assert with_flags.search.rng_seed == 99
    assert base.search.rng_seed == 0
