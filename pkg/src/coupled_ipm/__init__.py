"""Distributed primal-dual interior-point solver for loosely coupled QPs.

The primal-dual direction system is solved by an operator-splitting iteration
whose subproblems are per-agent and closed-form; the package provides the
exact outer loop, a globally convergent inexact variant with adaptive inner
thresholds, a consensus-splitting baseline, dense saddle-point oracles for
verification, and a deterministic synchronous multi-agent substrate.
"""

from . import admm, baseline, cli, ipm_exact, ipm_inexact, kkt, netsim, problem, saddle
from .exceptions import (
    ConfigError,
    CoupledIPMError,
    GenerationError,
    InteriorError,
    LocalSolveError,
    NumericalError,
    SingularSystemError,
    StallError,
    StructureError,
)
from .kkt import Direction, Iterate, default_start, residual_bundles
from .problem import (
    AgentSubproblem,
    CoupledProblem,
    ProblemGenConfig,
    generate,
    lift,
    load_problem,
    save_problem,
    scatter_add,
    tolerance_scale,
)
from .report import SolveReport, TraceRow, write_trace

__version__ = "0.1.0"
