"""Report rendering: text, CSV, and figures for sessions and benchmarks.

Every writer targets a directory and returns the artifact paths it
produced.  Text output is line oriented and stable so scripts can grep
it; CSV carries the same rows for spreadsheets; figures are rendered
headless straight to PNG files next to the delimited output.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .debugger.context import PHASE_FIT, CheckReport
from .faultlab import BASE_PROGRAMS, CATALOG, DetectionMatrix

FINDING_COLUMNS = ("check", "phase", "layer", "iteration", "metric",
                   "threshold", "fatal", "message")
MATRIX_COLUMNS = ("fault", "program", "category", "scored", "gate_passed",
                  "gate_reason", "expected", "fired", "tp_primary",
                  "tp_secondary", "fp", "fn", "seconds")


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ---------------------------------------------------------------------------
# debug session reports


def render_report_text(report: CheckReport) -> str:
    """One stable line per phase and per finding."""
    lines = [f"program: {report.program}",
             f"seed: {report.seed}",
             f"seconds: {report.seconds:.3f}"]
    for phase in report.phases:
        if phase.skipped:
            lines.append(f"phase {phase.name}: skipped")
        else:
            lines.append(f"phase {phase.name}: {len(phase.findings)} findings"
                         f" in {phase.seconds:.3f}s")
    lines.append(f"status: {'clean' if report.clean else 'findings'}")
    for f in report.findings:
        where = f" layer={f.layer}" if f.layer else ""
        when = f" iteration={f.iteration}" if f.iteration is not None else ""
        flag = " FATAL" if f.fatal else ""
        lines.append(f"{f.check} [{f.phase}]{where}{when}{flag}: {f.message}")
    return "\n".join(lines) + "\n"


def findings_csv_text(report: CheckReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(FINDING_COLUMNS)
    for f in report.findings:
        writer.writerow([_cell(v) for v in (
            f.check, f.phase, f.layer, f.iteration, f.metric, f.threshold,
            f.fatal, f.message)])
    return out.getvalue()


def _as_floats(values) -> np.ndarray:
    # round-tripped series may carry "inf"/"nan" strings; gap them
    def coerce(v):
        try:
            return float(v)
        except (TypeError, ValueError):
            return np.nan
    return np.array([coerce(v) for v in values], dtype=np.float64)


def save_session_figure(report: CheckReport, path: Path) -> bool:
    """Loss/metric curves with finding markers; False when nothing to plot."""
    panels = []
    prefit = _as_floats(report.series.get("prefit_loss", []))
    if prefit.size:
        panels.append("prefit")
    fit_loss = _as_floats(report.series.get("fit/loss", []))
    if fit_loss.size:
        panels.append("fit")
    post = _as_floats(report.series.get("post/epoch_first_loss", []))
    if post.size:
        panels.append("post")
    if not panels:
        return False
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 3.6))
    axes = np.atleast_1d(axes)
    for ax, panel in zip(axes, panels):
        if panel == "prefit":
            ax.plot(prefit, color="tab:blue")
            ax.set_title("single-batch fit loss")
            ax.set_xlabel("iteration")
        elif panel == "fit":
            iters = _as_floats(report.series.get("fit/iteration", []))
            if iters.size != fit_loss.size:
                iters = np.arange(fit_loss.size, dtype=np.float64)
            ax.plot(iters, fit_loss, color="tab:blue", label="loss")
            metric = _as_floats(report.series.get("fit/metric", []))
            if metric.size == fit_loss.size:
                twin = ax.twinx()
                twin.plot(iters, metric, color="tab:green", alpha=0.6,
                          label="metric")
                twin.set_ylabel("metric")
            marked = sorted({f.iteration for f in report.findings
                             if f.phase == PHASE_FIT
                             and f.iteration is not None})
            for it in marked:
                ax.axvline(it, color="tab:red", alpha=0.5, linestyle="--")
            ax.set_title("monitored fit")
            ax.set_xlabel("iteration")
        else:
            ax.plot(post, color="tab:blue")
            ax.set_title("epoch-start data loss")
            ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
    fig.suptitle(f"{report.program} (seed {report.seed})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def write_debug_report(report: CheckReport, outdir) -> dict:
    """Write JSON, text, CSV, and the session figure into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["json"] = outdir / "report.json"
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    paths["text"] = outdir / "report.txt"
    paths["text"].write_text(render_report_text(report))
    paths["csv"] = outdir / "findings.csv"
    paths["csv"].write_text(findings_csv_text(report))
    figure = outdir / "session.png"
    if save_session_figure(report, figure):
        paths["figure"] = figure
    return paths


# ---------------------------------------------------------------------------
# benchmark reports


def matrix_csv_text(matrix: DetectionMatrix) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(MATRIX_COLUMNS)
    for r in matrix.rows:
        writer.writerow([_cell(v) for v in (
            r.fault, r.program, r.category, r.scored, r.gate.passed,
            r.gate.reason, ";".join(r.expected), ";".join(r.fired),
            r.a, r.b, r.fp, r.fn, round(r.seconds, 3))])
    return out.getvalue()


_OUTCOME_COLORS = {
    "n/a": "#e6e6e6", "detected": "#4caf50", "missed": "#e53935",
    "gate failed": "#fb8c00", "unscored": "#64b5f6",
}


def _row_outcome(row) -> str:
    if not row.scored:
        return "unscored"
    if not row.gate.passed:
        return "gate failed"
    return "detected" if row.detected else "missed"


def save_matrix_figure(matrix: DetectionMatrix, path: Path) -> bool:
    """Fault-by-program outcome grid; False when the matrix is empty."""
    if not matrix.rows:
        return False
    faults = [f for f in CATALOG
              if any(r.fault == f for r in matrix.rows)]
    outcomes = sorted(_OUTCOME_COLORS)
    grid = np.zeros((len(faults), len(BASE_PROGRAMS)), dtype=np.int64)
    lookup = {(r.fault, r.program): r for r in matrix.rows}
    for i, fault in enumerate(faults):
        for j, base in enumerate(BASE_PROGRAMS):
            row = lookup.get((fault, base))
            name = "n/a" if row is None else _row_outcome(row)
            grid[i, j] = outcomes.index(name)
    colors = [_OUTCOME_COLORS[name] for name in outcomes]
    fig, ax = plt.subplots(figsize=(6, 0.34 * len(faults) + 1.8))
    ax.imshow(grid, cmap=matplotlib.colors.ListedColormap(colors),
              vmin=0, vmax=len(outcomes) - 1, aspect="auto")
    ax.set_xticks(range(len(BASE_PROGRAMS)), BASE_PROGRAMS)
    ax.set_yticks(range(len(faults)), faults, fontsize=7)
    handles = [matplotlib.patches.Patch(color=_OUTCOME_COLORS[n], label=n)
               for n in outcomes if n != "n/a"]
    ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.02, 1.0),
              fontsize=7, frameon=False)
    s = matrix.summary()
    ax.set_title(f"detection matrix (recall {s['recall']:.2f},"
                 f" precision {s['precision']:.2f})", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def write_benchmark_report(matrix: DetectionMatrix, outdir) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["json"] = outdir / "matrix.json"
    paths["json"].write_text(matrix.to_json() + "\n")
    paths["text"] = outdir / "matrix.txt"
    paths["text"].write_text(matrix.text_table() + "\n")
    paths["csv"] = outdir / "matrix.csv"
    paths["csv"].write_text(matrix_csv_text(matrix))
    figure = outdir / "matrix.png"
    if save_matrix_figure(matrix, figure):
        paths["figure"] = figure
    return paths


# ---------------------------------------------------------------------------
# timing reports


def render_timing_text(timing: dict) -> str:
    lines = [f"program: {timing['program']}", f"seed: {timing['seed']}"]
    for name, seconds in timing["phases"].items():
        lines.append(f"phase {name}: {seconds:.3f}s")
    lines.append(f"session seconds: {timing['session_seconds']:.3f}")
    lines.append(f"plain iteration: {timing['plain_iteration_seconds']:.6f}s")
    lines.append("monitored iteration:"
                 f" {timing['monitored_iteration_seconds']:.6f}s")
    lines.append(f"overhead ratio: {timing['overhead_ratio']:.2f}x")
    return "\n".join(lines) + "\n"


def save_timing_figure(timing: dict, path: Path) -> bool:
    phases = list(timing["phases"])
    seconds = [timing["phases"][name] for name in phases]
    if not phases:
        return False
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.2))
    left.barh(phases, seconds, color="tab:blue")
    left.set_xlabel("seconds")
    left.set_title("phase wall time")
    left.invert_yaxis()
    right.bar(["plain", "monitored"],
              [timing["plain_iteration_seconds"],
               timing["monitored_iteration_seconds"]],
              color=["tab:green", "tab:orange"])
    right.set_ylabel("seconds per iteration")
    right.set_title(f"overhead {timing['overhead_ratio']:.1f}x")
    fig.suptitle(f"{timing['program']} (seed {timing['seed']})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def write_timing_report(timing: dict, outdir) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["json"] = outdir / "timing.json"
    paths["json"].write_text(json.dumps(timing, indent=2) + "\n")
    paths["text"] = outdir / "timing.txt"
    paths["text"].write_text(render_timing_text(timing))
    figure = outdir / "timing.png"
    if save_timing_figure(timing, figure):
        paths["figure"] = figure
    return paths
