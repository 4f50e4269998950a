"""Command-line entry point: run, report, sweep and import subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from . import reporting
from .config import AppConfig, resolve_config
from .dataset import IMPORT_FORMATS, import_problems, load_problems, save_problems
from .errors import (
    ConfigError,
    DatasetError,
    ExecutorFault,
    GatewayUnavailable,
    OrpsError,
)
from .evaluation import (
    MethodSpec,
    Outcome,
    aggregate,
    run_method,
    scaling_sweep,
)
from .executor import ExecutionService
from .gateway import HttpChatBackend, ScriptedBackend
from .manifest import DONE, FAILED, RUNNING, RunLayout, RunLock
from .tree import TreeStore
from .util import canonical_json, stable_seed

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2
EXIT_INFRA = 3

_METHOD_ALIASES = {
    "orps": "orps",
    "orps-wt": "orps_with_tests",
    "cot": "cot",
    "bon": "bon",
}


class CountingClock:
    """Deterministic stand-in for time.monotonic used on scripted runs."""

    def __init__(self, step: float = 0.001):
        self._value = 0.0
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            self._value += self._step
            return self._value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orps",
        description=(
            "Beam search over reasoning states for program synthesis, with an "
            "execution-grounded critic, plus the benchmark harness around it."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one method over a dataset")
    _add_run_flags(run)

    sweep = sub.add_parser("sweep", help="pass@1 under growing inference budgets")
    _add_run_flags(sweep)
    sweep.add_argument(
        "--budgets", required=True, help="comma-separated ascending completion budgets"
    )

    report = sub.add_parser("report", help="re-render outputs for a finished run")
    report.add_argument("run_dir", help="run directory containing manifest.json")

    imp = sub.add_parser("import", help="convert a benchmark file to the dataset format")
    imp.add_argument("--format", required=True, choices=IMPORT_FORMATS)
    imp.add_argument("input", help="source JSONL file")
    imp.add_argument("output", help="destination dataset JSONL")
    return parser


def _add_run_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--config", help="YAML config file")
    cmd.add_argument("--dataset", required=True, help="problem set (JSONL)")
    cmd.add_argument("--method", default="orps", choices=sorted(_METHOD_ALIASES))
    cmd.add_argument("--bon-n", type=int, default=None, help="samples for --method bon")
    cmd.add_argument(
        "--ablation",
        choices=["execution", "reasoning"],
        help="drop execution feedback or in-depth reasoning from the search",
    )
    cmd.add_argument("--beam-width", type=int, default=None)
    cmd.add_argument("--rounds", type=int, default=None)
    cmd.add_argument("--samples", type=int, default=None)
    cmd.add_argument("--seed", type=int, default=None)
    cmd.add_argument("--mock-script", help="scripted-model directory (offline run)")
    cmd.add_argument("--max-parallel", type=int, default=None)
    cmd.add_argument("--resume", action="store_true")
    cmd.add_argument("--out", help="output root (default: runs)")
    cmd.add_argument("--run-id", help="run directory name (default derived from inputs)")
    cmd.add_argument("--no-time", action="store_true", help="skip the Time metric")


def _method_from_args(args) -> MethodSpec:
    name = _METHOD_ALIASES[args.method]
    if args.ablation:
        if name != "orps":
            raise ConfigError("--ablation only applies to --method orps")
        name = "orps_minus_execution" if args.ablation == "execution" else "orps_minus_reasoning"
    return MethodSpec(name, bon_n=args.bon_n or 1)


def _flags_dict(args) -> dict:
    return {
        "beam_width": args.beam_width,
        "rounds": args.rounds,
        "samples": args.samples,
        "seed": args.seed,
        "max_parallel": args.max_parallel,
        "out": args.out,
    }


def _build_stack(args, cfg: AppConfig):
    """Backend, executor and clock for a run; scripted runs are fully
    deterministic (playback backend, fake runner, report-based timing)."""
    if args.mock_script:
        backend = ScriptedBackend(args.mock_script)
        executor = ExecutionService(
            runner_cmd=cfg.runner_cmd or None,
            limits=cfg.limits,
            timing_source="report",
        )
        clock = CountingClock()
    else:
        backend = HttpChatBackend(cfg.gateway)
        executor = ExecutionService(
            runner_cmd=cfg.runner_cmd or None,
            limits=cfg.limits,
            timing_source="auto",
        )
        clock = None
    return backend, executor, clock


def _config_snapshot(cfg: AppConfig, method: MethodSpec) -> dict:
    return {
        "method": method.label,
        "search": {
            "beam_width": cfg.search.beam_width,
            "max_rounds": cfg.search.max_rounds,
            "expansion_factor": cfg.search.expansion_factor,
            "context_budget": cfg.search.context_budget,
            "generation_budget": cfg.search.generation_budget,
            "rng_seed": cfg.search.rng_seed,
        },
        "limits": {
            "cpu_seconds": cfg.limits.cpu_seconds,
            "memory_bytes": cfg.limits.memory_bytes,
            "max_tests": cfg.limits.max_tests,
        },
        "gateway_model": cfg.gateway.model,
    }


def cmd_run(args) -> int:
    cfg = resolve_config(args.config, _flags_dict(args))
    method = _method_from_args(args)
    problems = load_problems(args.dataset)

    run_id = args.run_id or "run-%012x" % (
        stable_seed(method.label, args.dataset, cfg.search.rng_seed) & 0xFFFFFFFFFFFF
    )
    layout = RunLayout(Path(cfg.out_dir) / run_id)
    backend, executor, clock = _build_stack(args, cfg)

    with RunLock(layout.run_dir):
        if args.resume and layout.manifest_path.is_file():
            manifest = layout.resume_manifest(args.dataset, method.label)
        elif layout.manifest_path.is_file():
            raise ConfigError(
                f"run directory {layout.run_dir} already exists; pass --resume or a new --run-id"
            )
        else:
            manifest = layout.create_manifest(
                run_id,
                method.label,
                args.dataset,
                _config_snapshot(cfg, method),
                [p.id for p in problems],
            )

        manifest_lock = threading.Lock()

        def skip(problem_id: str) -> Outcome | None:
            if manifest.problems.get(problem_id) != DONE:
                return None
            data = layout.read_outcome(problem_id)
            if data is None:
                return None
            log.info("skipping %s (already done)", problem_id)
            return Outcome.from_dict(data)

        def store_for(problem_id: str) -> TreeStore:
            with manifest_lock:
                if manifest.problems.get(problem_id) != DONE:
                    layout.set_status(manifest, problem_id, RUNNING)
            return TreeStore(layout.problem_dir(problem_id))

        def on_outcome(outcome: Outcome) -> None:
            layout.write_outcome(outcome.problem_id, outcome.to_dict())
            with manifest_lock:
                status = FAILED if outcome.error else DONE
                layout.set_status(manifest, outcome.problem_id, status)

        run = run_method(
            problems,
            method,
            cfg,
            backend,
            executor,
            store_for=store_for,
            on_outcome=on_outcome,
            skip=skip,
            clock=clock,
            max_parallel=cfg.resolved_parallelism(),
            profile=not args.no_time,
            resume=args.resume,
            tests_cache=layout.read_tests,
            tests_save=layout.write_tests,
        )
        report = aggregate(run.outcomes, method=method.label)
        created = reporting.emit_all(layout.run_dir, [report])

    print(f"run {run_id}: {len(run.outcomes)} problems")
    print(
        f"  pass@1 {report.pass_at_1:.1f}  tests {report.tests:.1f}  "
        f"valid {report.valid:.1f}  time "
        + (f"{report.time:.1f}" if report.time is not None else "n/a")
        + f" (coverage {report.time_coverage:.0%})"
    )
    for path in created:
        print(f"  wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_config(args.config, _flags_dict(args))
    problems = load_problems(args.dataset)
    try:
        budgets = [int(b) for b in args.budgets.split(",") if b.strip()]
    except ValueError:
        raise ConfigError(f"--budgets must be integers, got {args.budgets!r}")
    if not budgets:
        raise ConfigError("--budgets is empty")

    run_id = args.run_id or "sweep-%012x" % (
        stable_seed("sweep", args.dataset, cfg.search.rng_seed, *budgets) & 0xFFFFFFFFFFFF
    )
    layout = RunLayout(Path(cfg.out_dir) / run_id)
    backend, executor, clock = _build_stack(args, cfg)

    with RunLock(layout.run_dir):
        layout.run_dir.mkdir(parents=True, exist_ok=True)
        rows, runs = scaling_sweep(
            problems, budgets, cfg, backend, executor, clock=clock,
            profile=not args.no_time,
        )
        (layout.run_dir / "sweep.json").write_text(
            canonical_json({"budgets": budgets, "rows": rows}), encoding="utf-8"
        )
        for label, run in runs.items():
            sub = layout.run_dir / "methods" / label.replace("(", "_").replace(")", "")
            sub.mkdir(parents=True, exist_ok=True)
            for outcome in run.outcomes:
                (sub / f"{outcome.problem_id}.json".replace("/", "_")).write_text(
                    canonical_json(outcome.to_dict()), encoding="utf-8"
                )
        reports = [
            aggregate(run.outcomes, method=label) for label, run in sorted(runs.items())
        ]
        created = reporting.emit_all(layout.run_dir, reports, curve_rows=rows)

    print(f"sweep {run_id}: budgets {budgets}")
    for row in rows:
        print(f"  {row['method']:>6} @ {row['budget']:>4}: pass@1 {row['pass_at_1']:.1f}")
    for path in created:
        print(f"  wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    layout = RunLayout(args.run_dir)
    manifest = layout.load_manifest()

    outcomes = []
    for problem_id in manifest.problems:
        data = layout.read_outcome(problem_id)
        if data is not None:
            outcomes.append(Outcome.from_dict(data))
    if not outcomes:
        raise DatasetError(f"run {args.run_dir} has no persisted outcomes")

    curve_rows = []
    sweep_path = layout.run_dir / "sweep.json"
    if sweep_path.is_file():
        curve_rows = json.loads(sweep_path.read_text(encoding="utf-8"))["rows"]

    report = aggregate(outcomes, method=manifest.method)
    created = reporting.emit_all(layout.run_dir, [report], curve_rows=curve_rows)
    for path in created:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_import(args) -> int:
    records = import_problems(args.input, args.format)
    save_problems(records, args.output)
    print(f"imported {len(records)} problems -> {args.output}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "sweep": cmd_sweep,
        "report": cmd_report,
        "import": cmd_import,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except (GatewayUnavailable, ExecutorFault) as exc:
        print(f"infrastructure error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except OrpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
