"""Distributed exact interior-point outer loop.

Every outer iteration computes the perturbation from a min-reduction of the
per-agent surrogate gaps, obtains the direction from the splitting at fixed
tight thresholds, and lets each agent backtrack its own step size before the
smallest one is adopted network-wide.  Because all agents move with one common
step size, the consistency duals keep summing to zero across the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import admm, kkt, netsim
from .exceptions import ConfigError, InteriorError, NumericalError, StallError
from .problem import CoupledProblem, tolerance_scale
from .report import SolveReport, TraceRow


@dataclass
class OuterRecord:
    """Everything one outer iteration produced; handed to the outer callback."""

    l: int
    iterate_before: kkt.Iterate
    iterate_after: kkt.Iterate
    bundles: list
    direction: kkt.Direction
    state: admm.DirectionState
    info: admm.AdmmInfo
    mu: float
    alpha: float
    forcing: object = None
    eps_pri: object = None
    eps_dual: object = None


@dataclass
class ExactParams:
    """Tuning constants; tolerance fields default to the data-scaled value."""

    sigma: float = 0.1
    beta: float = 0.5
    gamma_ls: float = 0.01
    eps: float | None = None
    eps_feas: float | None = None
    rho: float = 0.5
    alpha_or: float = 1.0
    eps_pri: float | None = None
    eps_dual: float | None = None
    max_outer: int = 100
    max_inner: int = 10000
    warm_start: bool = True
    threads: int = 1
    alpha_floor: float = 1e-16

    def validate(self) -> None:
        if not 0 < self.sigma < 1:
            raise ConfigError("sigma must lie in (0, 1)")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if not 0.01 <= self.gamma_ls <= 0.1:
            raise ConfigError("gamma_ls must lie in [0.01, 0.1]")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if not 1.0 <= self.alpha_or < 2.0:
            raise ConfigError("alpha_or must lie in [1, 2)")


def perturbation(
    bundles: list[kkt.AgentResiduals],
    sigma: float,
    m_total: int,
    graph: netsim.AgentGraph,
    log: netsim.MessageLog | None = None,
) -> float:
    """mu = sigma * min_i(eta_hat_i) / sum_i m_i, with the min reduced over the network."""
    etas = [b.eta_hat for b in bundles]
    if min(etas) <= 0:
        raise InteriorError("surrogate gap must be positive to form the perturbation")
    return sigma * netsim.min_consensus(etas, graph, log).value / m_total


def local_step(sub, view, dview, merit0_sq: float, beta: float, gamma_ls: float,
               alpha_floor: float, skip_merit: bool = False) -> float:
    """Per-agent backtracking step size.

    Cap at 0.99 of the multiplier blocking ratio, backtrack until the slacks
    stay positive, then backtrack until the squared local merit satisfies the
    (1 - gamma alpha)^2 decrease test.

    ``skip_merit`` exempts an agent whose own termination criteria already
    hold: its merit sits at the numerical floor, where the multiplicative
    decrease test rejects every step and would veto the whole network.  The
    decrease property is then enforced on the network merit by the caller.
    """
    s, lam = view[2], view[3]
    ds, dlam = dview[2], dview[3]
    neg = dlam < 0
    alpha_max = 1.0
    if np.any(neg):
        alpha_max = min(1.0, float(np.min(-lam[neg] / dlam[neg])))
    alpha = 0.99 * alpha_max
    while np.any(s + alpha * ds <= 0):
        alpha *= beta
        if alpha < alpha_floor:
            raise StallError(f"agent {sub.index}: no interior step")
    if skip_merit:
        return alpha
    while True:
        trial = kkt.agent_residuals_at(sub, view, dview, alpha)
        if trial.merit_sq <= (1.0 - gamma_ls * alpha) ** 2 * merit0_sq:
            return alpha
        alpha *= beta
        if alpha < alpha_floor:
            raise StallError(f"agent {sub.index}: merit backtracking stalled")


def agent_converged(b: kkt.AgentResiduals, eps_feas_sq_N: float, eps_N: float) -> bool:
    return b.primal_sq <= eps_feas_sq_N and b.dual_sq <= eps_feas_sq_N and b.eta_hat <= eps_N


def trace_row(problem, it, bundles, l, mu, alpha, inner) -> TraceRow:
    """One outer-iteration trace record; the objective is the local-copy form."""
    return TraceRow(
        l=l,
        merit=math.sqrt(kkt.merit_norm_sq(bundles)),
        r_primal_sq=float(sum(b.primal_sq for b in bundles)),
        r_dual_sq=float(sum(b.dual_sq for b in bundles)),
        gap=kkt.surrogate_gap(bundles),
        mu=mu,
        alpha=alpha,
        inner_iters=inner,
        objective=problem.objective_w(it.W),
    )


def solve(
    problem: CoupledProblem,
    init: kkt.Iterate | None = None,
    params: ExactParams | None = None,
    log: netsim.MessageLog | None = None,
    inner_cb=None,
    outer_cb=None,
) -> SolveReport:
    params = params or ExactParams()
    params.validate()
    N = problem.n_agents
    m_total = problem.total_ineq
    scale = tolerance_scale(problem)
    eps = params.eps if params.eps is not None else scale
    eps_feas = params.eps_feas if params.eps_feas is not None else scale
    eps_pri = params.eps_pri if params.eps_pri is not None else (N / 2) * 1e-20
    eps_dual = params.eps_dual if params.eps_dual is not None else (N / 2) * 1e-20
    eps_feas_sq_N = eps_feas**2 / N
    eps_N = eps / N

    graph = netsim.AgentGraph.from_problem(problem)
    it = init.copy() if init is not None else kkt.default_start(problem)
    bundles = kkt.residual_bundles(problem, it)
    trace = [trace_row(problem, it, bundles, 0, 0.0, 0.0, 0)]
    state = None
    total_inner = 0
    max_inner_hits = 0
    termination = "max_outer"

    for l in range(1, params.max_outer + 1):
        mu = perturbation(bundles, params.sigma, m_total, graph, log)
        try:
            warm = state.copy_for_warm_start() if (params.warm_start and state) else None
            direction, state, info = admm.run(
                problem, it, mu, params.rho, eps_pri, eps_dual,
                warm=warm, alpha_or=params.alpha_or, max_inner=params.max_inner,
                threads=params.threads, bundles=bundles, graph=graph,
                inner_cb=inner_cb, log=log,
            )
        except NumericalError:
            termination = "numerical"
            break
        total_inner += info.inner_iters
        if not info.converged:
            max_inner_hits += 1

        views = [kkt.agent_view(it, problem, i) for i in range(N)]
        dviews = [kkt.direction_view(direction, problem, i) for i in range(N)]
        done = [agent_converged(b, eps_feas_sq_N, eps_N) for b in bundles]
        try:
            alphas = netsim.agent_map(
                lambda i: local_step(problem.agents[i], views[i], dviews[i],
                                     bundles[i].merit_sq, params.beta, params.gamma_ls,
                                     params.alpha_floor, skip_merit=done[i]),
                [(i,) for i in range(N)],
                params.threads,
            )
        except StallError:
            termination = "stall"
            break
        alpha = netsim.min_consensus(alphas, graph, log).value

        # The decrease test is revalidated on the network merit at the common
        # step size (per-agent acceptance at alpha_i does not imply acceptance
        # at the smaller common value), backtracking network-wide on failure.
        merit0_sq = kkt.merit_norm_sq(bundles)
        stalled = False
        while True:
            trial = [kkt.agent_residuals_at(problem.agents[i], views[i], dviews[i], alpha)
                     for i in range(N)]
            if kkt.merit_norm_sq(trial) <= (1.0 - params.gamma_ls * alpha) ** 2 * merit0_sq:
                break
            alpha *= params.beta
            if alpha < params.alpha_floor:
                stalled = True
                break
        if stalled:
            termination = "stall"
            break

        prev_it = it
        it = it.step(direction, alpha)
        bundles = trial
        trace.append(trace_row(problem, it, bundles, l, mu, alpha, info.inner_iters))
        if outer_cb is not None:
            outer_cb(OuterRecord(l, prev_it, it, bundles, direction, state, info, mu, alpha,
                                 eps_pri=eps_pri, eps_dual=eps_dual))
        flags = [agent_converged(b, eps_feas_sq_N, eps_N) for b in bundles]
        if netsim.flag_consensus(flags, graph, log):
            termination = "converged"
            break

    return SolveReport("exact", it, len(trace) - 1, total_inner, termination, trace,
                       max_inner_hits)
