"""traincheck: a feedforward training engine with a built-in debugger.

The package bundles a small numpy training stack (tensor helpers, layers,
losses, optimizers, data pipeline), a three-phase property-based debugger
that audits training programs before, during, and after fitting, and a
fault lab that injects known training bugs to measure what the debugger
catches.
"""

__version__ = "0.1.0"

from . import data, nn, program, stats, tensor
from .debugger import CheckContext, CheckReport, Finding, run_session
from .faultlab import (
    BASE_PROGRAMS,
    CATALOG,
    DetectionMatrix,
    FaultSpec,
    applicable_pairs,
    base_program,
    inject_fault,
    run_benchmark,
)

__all__ = [
    "__version__",
    "tensor",
    "stats",
    "nn",
    "data",
    "program",
    "CheckContext",
    "CheckReport",
    "Finding",
    "run_session",
    "BASE_PROGRAMS",
    "CATALOG",
    "DetectionMatrix",
    "FaultSpec",
    "applicable_pairs",
    "base_program",
    "inject_fault",
    "run_benchmark",
]
