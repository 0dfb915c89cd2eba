"""Shared vocabulary for the debugger: thresholds, findings, snapshots.

Every threshold a check consults lives on ``CheckContext`` so a whole
session can be tightened or relaxed from one place, and so reports can
record exactly which configuration produced their findings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

# Phase names, in execution order.
PHASE_PRE = "pre"
PHASE_FIT = "fit"
PHASE_POST = "post"
PHASES = (PHASE_PRE, PHASE_FIT, PHASE_POST)

# Check identifiers.  Pre-training:
UNS_INPS = "Uns-Inps"
UNS_OUTS = "Uns-Outs"
CONST_FEAT = "Const-Feat"
NAN_INPS = "NaN-Inps"
UNBALANCED_LABELS = "Unbalanced-Labels"
PI_W = "PI-W"
UN_SYM_W = "Un-Sym-W"
PI_B = "PI-B"
MISS_B = "Miss-B"
PI_LOSS = "PI-Loss"
INV_LOSS_DEP = "Inv-Loss-Dep"
INV_OUT_DEP = "Inv-Out-Dep"
INV_GRAD = "Inv-Grad"
INV_INP_DEP = "Inv-Inp-Dep"
UN_FIT_BATCH = "Un-Fit-Batch"
ZERO_LOSS = "Zero-Loss"
# On-fitting:
DIV_LOSS = "Div-Loss"
SD_LOSS = "SD-Loss"
HF_LOSS = "HF-Loss"
NR_LOSS = "NR-Loss"
VAN_GRAD = "Van-Grad"
DIV_GRAD = "Div-Grad"
OVER_REG_LOSS = "Over-Reg-Loss"
W_UP_SLOW = "W-Up-Slow"
W_UP_FAST = "W-Up-Fast"
DIV_W = "Div-W"
DIV_B = "Div-B"
NEG_W = "Neg-W"
DEAD_W = "Dead-W"
UNTRAINED_PARAMS = "Untrained-Params"
DEAD_RELU = "Dead-ReLU"
SAT_ACT = "Sat-Act"
UNS_ACT_LS = "Uns-Act-LS"
UNS_ACT_HS = "Uns-Act-HS"
OUT_RANGE_ACT = "Out-Range-Act"
INV_OUTS = "Inv-Outs"
# Post-fitting:
CORRUPTED_LABELS = "Corrupted-Labels"
SHIFTED_AUGMENTED = "Shifted-Augmented-Data"
UNS_MODE_TR = "Uns-Mode-Tr"

ALL_CHECKS = (
    UNS_INPS, UNS_OUTS, CONST_FEAT, NAN_INPS, UNBALANCED_LABELS,
    PI_W, UN_SYM_W, PI_B, MISS_B, PI_LOSS,
    INV_LOSS_DEP, INV_OUT_DEP, INV_GRAD, INV_INP_DEP, UN_FIT_BATCH, ZERO_LOSS,
    DIV_LOSS, SD_LOSS, HF_LOSS, NR_LOSS,
    VAN_GRAD, DIV_GRAD, OVER_REG_LOSS,
    W_UP_SLOW, W_UP_FAST, DIV_W, DIV_B, NEG_W, DEAD_W, UNTRAINED_PARAMS,
    DEAD_RELU, SAT_ACT, UNS_ACT_LS, UNS_ACT_HS, OUT_RANGE_ACT, INV_OUTS,
    CORRUPTED_LABELS, SHIFTED_AUGMENTED, UNS_MODE_TR,
)


@dataclass(frozen=True)
class CheckContext:
    """All tunable thresholds and schedule knobs for a debug session."""

    seed: int = 0
    # Schedule.
    period: int = 10
    buffer_size: int = 10
    max_fit_iterations: int = 200
    window: int = 5
    forbearance_periods: int = 2
    post_epochs: int = 50
    failed_on: bool = False
    parallel: bool = True
    # Statistical defaults.
    alpha: float = 0.05
    # Data scaling.
    scaling_mean_tol: float = 0.1
    scaling_std_low: float = 0.9
    scaling_std_high: float = 1.1
    bounds_tol: float = 1e-6
    scaled_span_min: float = 0.5
    shannon_min: float = 0.5
    # Initialization.
    bias_tol: float = 1e-6
    regression_bias_cv: float = 0.001
    initial_loss_rel_tol: float = 0.1
    initial_loss_sum_low: float = 1.8
    initial_loss_sum_high: float = 2.2
    # Probes.
    dependency_tol: float = 1e-8
    grad_rel_err_max: float = 1e-2
    grad_step: float = 1e-5
    grad_burn_in: int = 10
    grad_samples: int = 20
    grad_floor: float = 1e-8
    input_dep_iterations: int = 20
    stratified_per_class: int = 4
    overfit_mae: float = 1e-3
    zero_loss_eps: float = 1e-5
    zero_loss_smoothness: float = 0.95
    # Loss curve.
    min_loss_decay: float = 0.05
    fluct_smoothness_min: float = 0.5
    corr_min: float = 0.5
    corr_min_points: int = 5
    div_low_bound: float = 2.0
    van_high_bound: float = 0.5
    div_loss_ratio_max: float = 10.0
    # Gradients.
    grad_dead_eps: float = 1e-10
    # Parameters.
    update_ratio_low: float = -4.0
    update_ratio_high: float = -1.0
    weight_extreme_ratio: float = 0.95
    dead_weight_eps: float = 1e-5
    # Activations.
    dead_value_eps: float = 1e-5
    dead_layer_ratio: float = 0.5
    sat_rho_min: float = 0.95
    sat_layer_ratio: float = 0.5
    sat_bins: int = 10
    act_std_low: float = 0.5
    act_std_high: float = 2.0
    act_sample_neurons: int = 64
    output_tol: float = 1e-6
    # Post-fitting.
    cka_augm_min: float = 0.8
    cka_mode_min: float = 0.75
    mode_loss_rel_max: float = 0.5

    def with_overrides(self, **kw) -> "CheckContext":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Finding:
    """One emitted diagnosis."""

    check: str
    phase: str
    message: str
    layer: str | None = None
    iteration: int | None = None
    metric: float | None = None
    threshold: float | None = None
    fatal: bool = False

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "phase": self.phase,
            "message": self.message,
            "layer": self.layer,
            "iteration": self.iteration,
            "metric": _scrub(self.metric),
            "threshold": _scrub(self.threshold),
            "fatal": self.fatal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Finding":
        return cls(check=d["check"], phase=d["phase"], message=d["message"],
                   layer=d.get("layer"), iteration=d.get("iteration"),
                   metric=d.get("metric"), threshold=d.get("threshold"),
                   fatal=d.get("fatal", False))


def _scrub(v):
    """JSON cannot carry inf/nan floats; stringify them."""
    if v is None:
        return None
    f = float(v)
    if np.isfinite(f):
        return f
    return repr(f)


@dataclass
class Snapshot:
    """Training state captured at one monitoring hook."""

    iteration: int
    loss: float
    data_loss: float
    penalty: float
    metric: float
    loss_ratio: float
    fit: bool
    params: dict
    deltas: dict
    data_grads: dict
    penalty_grads: dict
    activations: dict
    output: Any


class RingBuffer:
    """Fixed-capacity history of the most recent snapshots."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []

    def push(self, item):
        self._items.append(item)
        if len(self._items) > self.capacity:
            self._items.pop(0)

    def items(self) -> list:
        return list(self._items)

    def last(self):
        return self._items[-1] if self._items else None

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class PhaseResult:
    name: str
    findings: list
    seconds: float
    skipped: bool = False

    def to_dict(self) -> dict:
        return {"name": self.name, "findings": [f.to_dict() for f in self.findings],
                "seconds": self.seconds, "skipped": self.skipped}


@dataclass
class CheckReport:
    """Full outcome of one debug session."""

    program: str
    seed: int
    context: dict
    phases: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    seconds: float = 0.0
    schema_version: int = 1

    @property
    def findings(self) -> list:
        out = []
        for phase in self.phases:
            out.extend(phase.findings)
        return out

    @property
    def checks_fired(self) -> list:
        seen = []
        for f in self.findings:
            if f.check not in seen:
                seen.append(f.check)
        return seen

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "program": self.program,
            "seed": self.seed,
            "context": {k: _scrub_value(v) for k, v in self.context.items()},
            "phases": [p.to_dict() for p in self.phases],
            "series": {k: _scrub_series(v) for k, v in self.series.items()},
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CheckReport":
        report = cls(program=d["program"], seed=d["seed"], context=d.get("context", {}),
                     seconds=d.get("seconds", 0.0),
                     schema_version=d.get("schema_version", 1))
        for p in d.get("phases", []):
            report.phases.append(PhaseResult(
                name=p["name"],
                findings=[Finding.from_dict(f) for f in p["findings"]],
                seconds=p["seconds"],
                skipped=p.get("skipped", False)))
        report.series = d.get("series", {})
        return report


def _scrub_value(v):
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    if isinstance(v, float):
        return _scrub(v)
    if isinstance(v, (list, tuple)):
        return [_scrub_value(x) for x in v]
    return repr(v)


def _scrub_series(values):
    return [_scrub(v) if isinstance(v, (int, float, np.floating)) else v for v in values]


def run_tasks(tasks, parallel: bool) -> list:
    """Run zero-argument callables, threaded when requested, keeping order."""
    if parallel and len(tasks) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=len(tasks)) as pool:
            return list(pool.map(lambda task: task(), tasks))
    return [task() for task in tasks]
