"""Solve reports and the per-iteration trace record shared by all methods."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .kkt import Iterate

TRACE_HEADER = [
    "method",
    "l",
    "merit",
    "r_primal_sq",
    "r_dual_sq",
    "gap",
    "mu",
    "alpha",
    "inner_iters",
    "objective",
]


@dataclass
class TraceRow:
    l: int
    merit: float
    r_primal_sq: float
    r_dual_sq: float
    gap: float
    mu: float
    alpha: float
    inner_iters: int
    objective: float


@dataclass
class SolveReport:
    """Outcome of one solver run.

    ``termination`` is one of ``converged``, ``max_outer``, ``stall``,
    ``numerical``.  ``trace`` holds one row per outer iteration plus the
    starting point (row l=0).
    """

    method: str
    iterate: Iterate
    outer_iters: int
    total_inner: int
    termination: str
    trace: list[TraceRow] = field(default_factory=list)
    max_inner_hits: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    def final_objective(self) -> float:
        return self.trace[-1].objective


def _fmt(value) -> str:
    # repr gives the shortest decimal that round-trips the float exactly.
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace(fh, report: SolveReport) -> None:
    """Emit the stable CSV schema; floats use shortest round-trip decimals."""
    writer = csv.writer(fh)
    writer.writerow(TRACE_HEADER)
    for row in report.trace:
        writer.writerow(
            [
                report.method,
                row.l,
                _fmt(row.merit),
                _fmt(row.r_primal_sq),
                _fmt(row.r_dual_sq),
                _fmt(row.gap),
                _fmt(row.mu),
                _fmt(row.alpha),
                row.inner_iters,
                _fmt(row.objective),
            ]
        )
