"""Command line front end: debug a program, run the benchmark, or time it.

Three subcommands share one configuration model.  ``debug`` runs a full
check session against a named base program and exits 0 only when the
session is clean.  ``bench`` scores the fault catalog and exits 0 only
when recall clears the floor.  ``timing`` reports per-phase wall time
and the monitored-versus-plain iteration overhead.  All commands print
a stable text report to stdout and, given ``--out``, write JSON and CSV
plus rendered PNG figures into that directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields

from .debugger.context import PHASES, CheckContext
from .debugger.monitor import FitMonitor
from .debugger.session import DebugSession, probe_batch
from .errors import ConfigError, TraincheckError
from .faultlab import (
    BASE_PROGRAMS,
    applicable_pairs,
    base_program,
    run_benchmark,
)
from .program import train_on_batch
from .report import (
    render_timing_text,
    render_report_text,
    write_benchmark_report,
    write_debug_report,
    write_timing_report,
)

SCHEMA_VERSION = 1

EXIT_CLEAN = 0
EXIT_FINDINGS = 1
EXIT_CONFIG = 2

_CONTEXT_KEYS = tuple(f.name for f in fields(CheckContext))
_EXTRA_KEYS = ("schema_version", "program", "phases")


def load_session_config(path: str) -> dict:
    """Read a JSON session config, rejecting unknown keys."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path!r} must be a JSON object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config {path!r} has schema_version {version!r},"
            f" expected {SCHEMA_VERSION}")
    unknown = sorted(set(raw) - set(_CONTEXT_KEYS) - set(_EXTRA_KEYS))
    if unknown:
        raise ConfigError(
            f"config {path!r} has unknown keys: {', '.join(unknown)}")
    if "phases" in raw:
        bad = [p for p in raw["phases"] if p not in PHASES]
        if bad:
            raise ConfigError(
                f"config {path!r} names unknown phases: {', '.join(bad)}")
    if "program" in raw and raw["program"] not in BASE_PROGRAMS:
        raise ConfigError(
            f"config {path!r} names unknown program {raw['program']!r}")
    return raw


def _build_context(args, config: dict) -> CheckContext:
    """Defaults, then config file values, then explicit flags."""
    overrides = {k: v for k, v in config.items() if k in _CONTEXT_KEYS}
    flag_map = {
        "seed": args.seed, "period": args.period,
        "buffer_size": args.buffer_size,
        "max_fit_iterations": args.max_fit_iters,
    }
    for key, value in flag_map.items():
        if value is not None:
            overrides[key] = value
    if args.failed_on:
        overrides["failed_on"] = True
    if args.no_parallel:
        overrides["parallel"] = False
    try:
        return CheckContext().with_overrides(**overrides)
    except TraincheckError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_phases(args, config: dict):
    if args.phases is not None:
        names = [p.strip() for p in args.phases.split(",") if p.strip()]
        bad = [p for p in names if p not in PHASES]
        if bad:
            raise ConfigError(f"unknown phases: {', '.join(bad)}")
        if not names:
            raise ConfigError("--phases must name at least one phase")
        return tuple(names)
    return tuple(config.get("phases", PHASES))


def _resolve_program(args, config: dict) -> str:
    name = args.program or config.get("program")
    if name is None:
        raise ConfigError("no program named; pass one or set it in the config")
    return name


# ---------------------------------------------------------------------------
# subcommands


def cmd_debug(args) -> int:
    config = load_session_config(args.config) if args.config else {}
    ctx = _build_context(args, config)
    phases = _resolve_phases(args, config)
    program = base_program(_resolve_program(args, config), ctx.seed)
    report = DebugSession(program, ctx, phases).run()
    sys.stdout.write(render_report_text(report))
    if args.out:
        paths = write_debug_report(report, args.out)
        _list_artifacts(paths)
    return EXIT_CLEAN if report.clean else EXIT_FINDINGS


def cmd_bench(args) -> int:
    config = load_session_config(args.config) if args.config else {}
    ctx = _build_context(args, config)
    pairs = applicable_pairs(args.only)
    if not pairs:
        raise ConfigError(f"selector {args.only!r} matches no benchmark pairs")
    matrix = run_benchmark(ctx, pairs)
    sys.stdout.write(matrix.text_table() + "\n")
    if args.out:
        paths = write_benchmark_report(matrix, args.out)
        _list_artifacts(paths)
    if not matrix.designated():
        return EXIT_CLEAN
    return EXIT_CLEAN if matrix.recall() >= args.recall_floor else EXIT_FINDINGS


def cmd_timing(args) -> int:
    config = load_session_config(args.config) if args.config else {}
    ctx = _build_context(args, config)
    program = base_program(_resolve_program(args, config), ctx.seed)
    report = DebugSession(program, ctx).run()
    x, y = probe_batch(program, ctx)
    iters = args.iterations

    plain = program.fork("timing-plain")
    t0 = time.perf_counter()
    train_on_batch(plain, x, y, iters)
    plain_seconds = time.perf_counter() - t0

    monitored_ctx = ctx.with_overrides(max_fit_iterations=iters)
    monitor = FitMonitor(program, x, y, monitored_ctx)
    t0 = time.perf_counter()
    findings, _ = monitor.run()
    monitored_seconds = time.perf_counter() - t0
    ran = iters
    for f in findings:
        if f.fatal and f.iteration is not None:
            ran = f.iteration
            break

    timing = {
        "schema_version": SCHEMA_VERSION,
        "program": program.name,
        "seed": ctx.seed,
        "phases": {p.name: round(p.seconds, 4) for p in report.phases
                   if not p.skipped},
        "session_seconds": round(report.seconds, 4),
        "iterations": iters,
        "plain_iteration_seconds": plain_seconds / iters,
        "monitored_iteration_seconds": monitored_seconds / ran,
        "overhead_ratio": (monitored_seconds / ran) / (plain_seconds / iters),
    }
    sys.stdout.write(render_timing_text(timing))
    if args.out:
        paths = write_timing_report(timing, args.out)
        _list_artifacts(paths)
    return EXIT_CLEAN


def _list_artifacts(paths: dict):
    for kind in sorted(paths):
        sys.stdout.write(f"wrote {kind}: {paths[kind]}\n")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser, with_program: bool):
    if with_program:
        parser.add_argument("program", nargs="?", choices=BASE_PROGRAMS,
                            help="base program to build and check")
    parser.add_argument("--config", help="JSON session config file")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--period", type=int,
                        help="iterations between monitoring hooks")
    parser.add_argument("--buffer-size", type=int,
                        help="snapshots kept for windowed checks")
    parser.add_argument("--max-fit-iters", type=int,
                        help="iteration budget for the monitored fit")
    parser.add_argument("--failed-on", action="store_true",
                        help="stop at the first finding")
    parser.add_argument("--no-parallel", action="store_true",
                        help="run probe pairs and benchmark rows serially")
    parser.add_argument("--out", help="directory for JSON/CSV/PNG artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traincheck",
        description="property-based debugging for feedforward training programs")
    sub = parser.add_subparsers(dest="command", required=True)

    debug = sub.add_parser("debug", help="run a full check session")
    _add_common(debug, with_program=True)
    debug.add_argument("--phases",
                       help=f"comma separated subset of {','.join(PHASES)}")
    debug.set_defaults(func=cmd_debug, phases=None)

    bench = sub.add_parser("bench", help="score the fault catalog")
    _add_common(bench, with_program=False)
    bench.add_argument("--only",
                       help="filter pairs by category, fault id, or program")
    bench.add_argument("--recall-floor", type=float, default=0.8,
                       help="minimum recall for exit code 0")
    bench.set_defaults(func=cmd_bench)

    timing = sub.add_parser("timing", help="measure phase and hook overhead")
    _add_common(timing, with_program=True)
    timing.add_argument("--iterations", type=int, default=100,
                        help="iterations for the overhead measurement")
    timing.set_defaults(func=cmd_timing)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except TraincheckError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
