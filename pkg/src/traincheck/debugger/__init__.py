"""Property-based debugger for feedforward training programs."""

from .context import (
    ALL_CHECKS,
    PHASE_FIT,
    PHASE_POST,
    PHASE_PRE,
    PHASES,
    CheckContext,
    CheckReport,
    Finding,
    PhaseResult,
    RingBuffer,
    Snapshot,
)
from .monitor import FitMonitor
from .postcheck import run_post_checks
from .session import DebugSession, probe_batch, run_session

__all__ = [
    "ALL_CHECKS",
    "PHASES",
    "PHASE_PRE",
    "PHASE_FIT",
    "PHASE_POST",
    "CheckContext",
    "CheckReport",
    "Finding",
    "PhaseResult",
    "RingBuffer",
    "Snapshot",
    "FitMonitor",
    "run_post_checks",
    "DebugSession",
    "probe_batch",
    "run_session",
]
