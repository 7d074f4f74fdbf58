"""Consensus splitting applied directly to the coupled problem (the comparison
baseline).

All local constraints are kept inside the per-agent proximal subproblem, which
is therefore an inequality-constrained QP; a small dense primal-dual interior
point reusing the residual machinery in single-agent mode solves it, replacing
the external convex-programming call.  Only the consensus duals are part of
the splitting state.

The shared stop test needs slack/multiplier values that plain consensus
splitting never forms; they are synthesized from the final local-QP duals of
the most recent proximal solve, and the consistency dual is taken as
rho * (scaled consensus dual after the update), which makes the synthesized
dual residual equal the local QP's stationarity residual plus the classic
rho-scaled x-change term.

Iteration accounting: ``inner_iters`` per round is the maximum local interior
point iteration count across agents (the parallel-time analog of the external
solver's per-round count), and ``total_inner`` sums those maxima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kkt, netsim
from .exceptions import ConfigError, LocalSolveError
from .ipm_exact import agent_converged, trace_row
from .problem import AgentSubproblem, CoupledProblem, tolerance_scale
from .report import SolveReport

_LOCAL_SIGMA = 0.1
_LOCAL_BETA = 0.5
_LOCAL_GAMMA = 0.01
_LOCAL_ALPHA_FLOOR = 1e-16


@dataclass
class BaselineParams:
    rho: float = 0.5
    alpha_or: float = 1.0
    eps: float | None = None
    eps_feas: float | None = None
    max_iter: int = 5000
    local_tol: float = 1e-9
    local_max_iter: int = 200
    threads: int = 1

    def validate(self) -> None:
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if not 1.0 <= self.alpha_or < 2.0:
            raise ConfigError("alpha_or must lie in [1, 2)")


@dataclass
class BaselineState:
    """Consensus splitting state; x is the |I_j|-average of owner contributions."""

    W: list[np.ndarray]
    x: np.ndarray
    vcbar: list[np.ndarray]
    k: int


@dataclass
class LocalQPResult:
    w: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    iters: int
    merit: float


def local_qp(
    sub: AgentSubproblem,
    x_J: np.ndarray,
    vcbar: np.ndarray,
    rho: float,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> LocalQPResult:
    """Solve min f_i(w) + rho/2 |w - x_J + vcbar|^2 subject to the local constraints.

    The proximal term folds into the quadratic data (P + rho/2 I and a shifted
    linear term), so the solver is the plain single-agent interior point on a
    temporary subproblem; consistency plays no role here.
    """
    anchor = x_J - vcbar
    lsub = AgentSubproblem(
        sub.index,
        sub.P + 0.5 * rho * np.eye(sub.dim),
        sub.q - rho * anchor,
        0.0,
        sub.A_in,
        sub.b_in,
        sub.A_eq,
        sub.b_eq,
        sub.J,
    )
    w = anchor.copy()
    s = np.maximum(1.0, -lsub.ineq(w))
    lam = np.ones(lsub.n_ineq)
    v = np.zeros(lsub.n_eq)
    zeros = np.zeros(lsub.dim)
    d, p = lsub.dim, lsub.n_eq

    for it in range(max_iter):
        bundle = kkt.agent_residuals(lsub, w, w, s, lam, v, zeros)
        merit = math.sqrt(bundle.merit_sq)
        if merit <= tol:
            return LocalQPResult(w, s, lam, v, it, merit)
        mu = _LOCAL_SIGMA * bundle.eta_hat / max(lsub.n_ineq, 1)
        H = kkt.hpd(lsub, w, s, lam)
        r = kkt.r_vec(lsub, bundle, w, s, lam, mu)
        system = np.zeros((d + p, d + p))
        system[:d, :d] = H
        system[:d, d:] = lsub.A_eq.T
        system[d:, :d] = lsub.A_eq
        rhs = np.concatenate([-r, -bundle.r_primal2])
        try:
            sol = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError as exc:
            raise LocalSolveError(f"agent {sub.index}: singular local system") from exc
        dw, dv = sol[:d], sol[d:]
        ds, dlam = kkt.recover_sl(lsub, bundle, s, lam, dw, mu, w)

        neg = dlam < 0
        alpha = 0.99 * (min(1.0, float(np.min(-lam[neg] / dlam[neg]))) if np.any(neg) else 1.0)
        while np.any(s + alpha * ds <= 0):
            alpha *= _LOCAL_BETA
            if alpha < _LOCAL_ALPHA_FLOOR:
                raise LocalSolveError(f"agent {sub.index}: local step collapsed")
        while True:
            tb = kkt.agent_residuals(lsub, w + alpha * dw, w + alpha * dw, s + alpha * ds,
                                     lam + alpha * dlam, v + alpha * dv, zeros)
            if tb.merit_sq <= (1.0 - _LOCAL_GAMMA * alpha) ** 2 * bundle.merit_sq:
                break
            alpha *= _LOCAL_BETA
            if alpha < _LOCAL_ALPHA_FLOOR:
                raise LocalSolveError(f"agent {sub.index}: local line search stalled")
        w = w + alpha * dw
        s = s + alpha * ds
        lam = lam + alpha * dlam
        v = v + alpha * dv
    raise LocalSolveError(f"agent {sub.index}: local QP did not converge in {max_iter} iterations")


def solve(
    problem: CoupledProblem,
    init: kkt.Iterate | None = None,
    params: BaselineParams | None = None,
    log: netsim.MessageLog | None = None,
) -> SolveReport:
    params = params or BaselineParams()
    params.validate()
    N = problem.n_agents
    scale = tolerance_scale(problem)
    eps = params.eps if params.eps is not None else scale
    eps_feas = params.eps_feas if params.eps_feas is not None else scale
    eps_feas_sq_N = eps_feas**2 / N
    eps_N = eps / N
    rho = params.rho

    graph = netsim.AgentGraph.from_problem(problem)
    it0 = init.copy() if init is not None else kkt.default_start(problem)
    state = BaselineState([w.copy() for w in it0.W], it0.x.copy(),
                          [vc / rho for vc in it0.v_c], 0)
    bundles = kkt.residual_bundles(problem, it0)
    trace = [trace_row(problem, it0, bundles, 0, 0.0, 0.0, 0)]
    residual_rows = []
    total_inner = 0
    termination = "max_outer"
    iterate = it0

    for k in range(1, params.max_iter + 1):
        results = netsim.agent_map(
            lambda i: local_qp(problem.agents[i], state.x[problem.agents[i].J],
                               state.vcbar[i], rho, params.local_tol, params.local_max_iter),
            [(i,) for i in range(N)],
            params.threads,
        )
        inner_k = max(res.iters for res in results)
        total_inner += inner_k
        W = [res.w for res in results]
        if params.alpha_or != 1.0:
            relaxed = [params.alpha_or * W[i] + (1.0 - params.alpha_or) * state.x[sub.J]
                       for i, sub in enumerate(problem.agents)]
        else:
            relaxed = W
        x_new = netsim.shared_average(
            problem, [relaxed[i] + state.vcbar[i] for i in range(N)], log
        )
        vcbar = [state.vcbar[i] + relaxed[i] - x_new[problem.agents[i].J] for i in range(N)]

        consensus_sq = sum(
            float(np.sum((W[i] - x_new[sub.J]) ** 2)) for i, sub in enumerate(problem.agents)
        )
        dual_vec = problem.scatter_sum([x_new[sub.J] - state.x[sub.J] for sub in problem.agents])
        dual_res = rho * float(np.linalg.norm(dual_vec))
        state = BaselineState(W, x_new, vcbar, k)

        v_c = [rho * vb for vb in vcbar]
        iterate = kkt.Iterate(W, x_new, [res.s for res in results],
                              [res.lam for res in results], [res.v for res in results], v_c)
        bundles = kkt.residual_bundles(problem, iterate)
        trace.append(trace_row(problem, iterate, bundles, k, 0.0, 1.0, inner_k))
        residual_rows.append({"l": k, "consensus_sq": consensus_sq, "dual_residual": dual_res})
        flags = [agent_converged(b, eps_feas_sq_N, eps_N) for b in bundles]
        if netsim.flag_consensus(flags, graph, log):
            termination = "converged"
            break

    return SolveReport("baseline-admm", iterate, len(trace) - 1, total_inner, termination,
                       trace, 0, extras={"admm_residuals": residual_rows})
