"""Rendered outputs for a finished run: report.json, report.md, curves.csv,
radar.csv and the matching figures. Everything here is derived from
persisted outcomes only, so reports can be regenerated offline."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import BenchmarkReport
from .util import canonical_json

log = logging.getLogger(__name__)

# Lower raw values are better for every profiled metric, so the radar shows
# reference/candidate: 1.0 matches the reference, higher beats it.
RADAR_METRICS = (
    ("time", "profile", "wall_or_enabled"),
    ("instructions", "profile", "instructions"),
    ("branch_misses", "profile", "branch_misses"),
    ("page_faults", "profile", "page_faults"),
    ("code_length", "static", "code_length_lines"),
    ("ast_nodes", "static", "ast_node_count"),
    ("cyclomatic", "static", "cyclomatic"),
    ("cognitive", "static", "cognitive"),
)


def _metric_value(blob: dict[str, Any] | None, field: str) -> float | None:
    if not blob:
        return None
    if field == "wall_or_enabled":
        if blob.get("counters_available"):
            return blob.get("time_enabled_ns")
        return blob.get("wall_ns")
    return blob.get(field)


def radar_rows(report: BenchmarkReport) -> list[dict[str, Any]]:
    """Per-metric normalized means (reference / candidate) over problems
    where both sides are known and nonzero."""
    rows = []
    for name, source, field in RADAR_METRICS:
        ratios = []
        for problem in report.per_problem:
            cand = _metric_value(problem.get(source), field)
            ref = _metric_value(problem.get(f"reference_{source}"), field)
            if cand and ref:
                ratios.append(ref / cand)
        if ratios:
            rows.append(
                {
                    "method": report.method,
                    "metric": name,
                    "normalized": sum(ratios) / len(ratios),
                    "coverage": len(ratios) / max(1, report.n_problems),
                }
            )
    return rows


def write_report_json(report: BenchmarkReport, path: Path) -> None:
    path.write_text(canonical_json(report.to_dict()), encoding="utf-8")


def render_report_md(
    reports: Sequence[BenchmarkReport], curve_rows: Sequence[dict[str, Any]] = ()
) -> str:
    lines = ["# Benchmark report", ""]
    lines.append("| Method | Pass@1 | Tests | Valid | Time | Time coverage |")
    lines.append("|---|---|---|---|---|---|")
    for rep in reports:
        time_cell = f"{rep.time:.1f}" if rep.time is not None else "n/a"
        lines.append(
            f"| {rep.method} | {rep.pass_at_1:.1f} | {rep.tests:.1f} "
            f"| {rep.valid:.1f} | {time_cell} | {rep.time_coverage:.0%} |"
        )
    lines.append("")
    lines.append("All metrics are percentages; Time is relative to the reference solution")
    lines.append("(100 = parity, lower is better) over the problems where it was computable.")

    tagged = [rep for rep in reports if rep.per_tag and set(rep.per_tag) != {"untagged"}]
    for rep in tagged:
        lines.append("")
        lines.append(f"## Per-tag results ({rep.method})")
        lines.append("")
        lines.append("| Tag | Problems | Pass@1 | Unsolved |")
        lines.append("|---|---|---|---|")
        for tag, bucket in rep.per_tag.items():
            lines.append(
                f"| {tag} | {bucket['n']} | {bucket['pass_at_1']:.1f} | {bucket['unsolved']} |"
            )

    if curve_rows:
        lines.append("")
        lines.append("## Scaling sweep")
        lines.append("")
        lines.append("| Method | Budget | Pass@1 |")
        lines.append("|---|---|---|")
        for row in curve_rows:
            lines.append(f"| {row['method']} | {row['budget']} | {row['pass_at_1']:.1f} |")
    lines.append("")
    return "\n".join(lines)


def write_csv(rows: Sequence[dict[str, Any]], path: Path, columns: Sequence[str]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in columns})


# ---------------------------------------------------------------------------
# Figures


def plot_curves(curve_rows: Sequence[dict[str, Any]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    methods = sorted({row["method"] for row in curve_rows})
    for method in methods:
        pts = sorted(
            ((r["budget"], r["pass_at_1"]) for r in curve_rows if r["method"] == method)
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("Inference budget (completions)")
    ax.set_ylabel("Pass@1 (%)")
    ax.set_ylim(0, 105)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_radar(rows: Sequence[dict[str, Any]], path: Path) -> None:
    methods = sorted({row["method"] for row in rows})
    metrics = [name for name, _, _ in RADAR_METRICS]
    present = [m for m in metrics if any(r["metric"] == m for r in rows)]
    if len(present) < 3:
        log.info("not enough radar metrics to plot (%d)", len(present))
        return
    angles = np.linspace(0, 2 * np.pi, len(present), endpoint=False)
    fig, ax = plt.subplots(figsize=(5, 5), subplot_kw={"projection": "polar"})
    for method in methods:
        values = []
        for metric in present:
            match = [r for r in rows if r["method"] == method and r["metric"] == metric]
            values.append(match[0]["normalized"] if match else 0.0)
        closed = values + values[:1]
        ax.plot(np.append(angles, angles[0]), closed, label=method)
        ax.fill(np.append(angles, angles[0]), closed, alpha=0.15)
    ax.set_xticks(angles)
    ax.set_xticklabels(present, fontsize=8)
    ax.set_title("Profile vs reference (1.0 = parity, higher is better)", fontsize=9)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_tags(report: BenchmarkReport, path: Path) -> None:
    tags = [t for t in report.per_tag if t != "untagged"]
    if not tags:
        return
    solved = [report.per_tag[t]["solved"] for t in tags]
    unsolved = [report.per_tag[t]["unsolved"] for t in tags]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(tags) + 2), 3.8))
    x = np.arange(len(tags))
    ax.bar(x, solved, label="solved", color="tab:green")
    ax.bar(x, unsolved, bottom=solved, label="unsolved", color="tab:red", alpha=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(tags, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("Problems")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_all(
    run_dir: Path,
    reports: Sequence[BenchmarkReport],
    curve_rows: Sequence[dict[str, Any]] = (),
) -> list[Path]:
    """Write every rendered artifact for a run; returns the created paths."""
    created = []
    primary = reports[0]
    write_report_json(primary, run_dir / "report.json")
    created.append(run_dir / "report.json")

    md = render_report_md(reports, curve_rows)
    (run_dir / "report.md").write_text(md, encoding="utf-8")
    created.append(run_dir / "report.md")

    all_radar = [row for rep in reports for row in radar_rows(rep)]
    write_csv(
        all_radar, run_dir / "radar.csv", ["method", "metric", "normalized", "coverage"]
    )
    created.append(run_dir / "radar.csv")
    if curve_rows:
        write_csv(curve_rows, run_dir / "curves.csv", ["method", "budget", "pass_at_1"])
        created.append(run_dir / "curves.csv")

    figures = run_dir / "figures"
    figures.mkdir(exist_ok=True)
    if curve_rows:
        plot_curves(curve_rows, figures / "curves.png")
        created.append(figures / "curves.png")
    if all_radar:
        plot_radar(all_radar, figures / "radar.png")
        created.append(figures / "radar.png")
    if primary.per_tag and set(primary.per_tag) != {"untagged"}:
        plot_tags(primary, figures / "tags.png")
        created.append(figures / "tags.png")
    return created
