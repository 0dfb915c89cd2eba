"""Session driver: runs the three phases against one training program.

A session never trains the program it is given; every phase works on forks,
so running a session leaves the original bitwise untouched.  Findings
marked fatal (a non-finite loss) end the session early: later phases would
only measure garbage.  A finite divergence finding skips just the
post-fitting phase, whose multi-epoch comparisons assume the loss can
still be driven somewhere.  With ``ctx.failed_on`` the session instead
stops at the first finding of any kind.
"""

from __future__ import annotations

import time

from ..data import stratified_single_batch
from ..program import TrainingProgram
from ..tensor import RngStream
from .context import (
    DIV_LOSS,
    PHASE_FIT,
    PHASE_POST,
    PHASE_PRE,
    PHASES,
    UN_FIT_BATCH,
    CheckContext,
    CheckReport,
    Finding,
    PhaseResult,
)
from .monitor import FitMonitor
from .postcheck import run_post_checks
from .precheck import (
    check_batch_fit,
    check_bias_init,
    check_data_scaling,
    check_dependencies,
    check_gradients,
    check_initial_loss,
    check_input_dependency,
    check_label_balance,
    check_outputs,
    check_weight_init,
    labels_balanced,
)


def probe_batch(program: TrainingProgram, ctx: CheckContext):
    """The stratified single batch every probing check shares."""
    rng = RngStream(ctx.seed).split("probe-batch")
    return stratified_single_batch(program.train_data, ctx.stratified_per_class, rng)


def _dedupe(findings):
    out, seen = [], set()
    for f in findings:
        key = (f.check, f.layer)
        if key in seen:
            continue
        seen.add(key)
        out.append(f)
    return out


class _Stop(Exception):
    """Internal control flow: halt the session where it stands."""


class DebugSession:
    def __init__(self, program: TrainingProgram, ctx: CheckContext | None = None,
                 phases=PHASES):
        unknown = [p for p in phases if p not in PHASES]
        if unknown:
            raise ValueError(f"unknown phases: {unknown}")
        self.program = program
        self.ctx = ctx or CheckContext()
        self.phases = tuple(phases)
        self.report = CheckReport(program=program.name, seed=self.ctx.seed,
                                  context=self.ctx.to_dict())
        self._fatal = False

    def run(self) -> CheckReport:
        started = time.perf_counter()
        x, y = probe_batch(self.program, self.ctx)
        for phase in PHASES:
            if phase not in self.phases or self._fatal or \
                    (phase == PHASE_POST and self._found(DIV_LOSS)):
                self._skip(phase)
                continue
            runner = {PHASE_PRE: self._run_pre, PHASE_FIT: self._run_fit,
                      PHASE_POST: self._run_post}[phase]
            t0 = time.perf_counter()
            findings: list[Finding] = []
            try:
                runner(x, y, findings)
            except _Stop:
                pass
            findings = _dedupe(findings)
            self._fatal = self._fatal or any(f.fatal for f in findings)
            self.report.phases.append(PhaseResult(
                name=phase, findings=findings,
                seconds=time.perf_counter() - t0))
            if self.ctx.failed_on and findings:
                for rest in PHASES[PHASES.index(phase) + 1:]:
                    self._skip(rest)
                break
        self.report.seconds = time.perf_counter() - started
        return self.report

    def _skip(self, phase: str):
        self.report.phases.append(PhaseResult(name=phase, findings=[],
                                              seconds=0.0, skipped=True))

    def _found(self, check: str) -> bool:
        return any(f.check == check
                   for res in self.report.phases for f in res.findings)

    def _collect(self, findings, new):
        findings.extend(new)
        if any(f.fatal for f in new):
            raise _Stop
        if self.ctx.failed_on and findings:
            raise _Stop

    def _run_pre(self, x, y, findings):
        program, ctx = self.program, self.ctx
        balanced = labels_balanced(program, ctx)
        self._collect(findings, check_data_scaling(program, ctx))
        self._collect(findings, check_label_balance(program, ctx))
        self._collect(findings, check_weight_init(program, ctx))
        self._collect(findings, check_bias_init(program, ctx, balanced))
        self._collect(findings, check_initial_loss(program, x, y, ctx, balanced))
        self._collect(findings, check_outputs(program, x, y, ctx))
        self._collect(findings, check_dependencies(program, x, y, ctx))
        self._collect(findings, check_gradients(program, x, y, ctx))
        self._collect(findings, check_input_dependency(program, x, y, ctx))
        fit_findings, losses = check_batch_fit(program, x, y, ctx)
        self.report.series["prefit_loss"] = losses
        self._collect(findings, fit_findings)

    def _run_fit(self, x, y, findings):
        monitor = FitMonitor(self.program, x, y, self.ctx)
        emitted, series = monitor.run()
        for key, values in series.items():
            self.report.series[f"fit/{key}"] = values
        self._collect(findings, emitted)

    def _run_post(self, x, y, findings):
        emitted, series, _ = run_post_checks(
            self.program, self.ctx, batch_fit_ok=not self._found(UN_FIT_BATCH))
        for key, values in series.items():
            self.report.series[f"post/{key}"] = values
        self._collect(findings, emitted)


def run_session(program: TrainingProgram, ctx: CheckContext | None = None,
                phases=PHASES) -> CheckReport:
    """Debug one program through the requested phases."""
    return DebugSession(program, ctx, phases).run()
