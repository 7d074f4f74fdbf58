"""Globally convergent inexact interior-point outer loop.

The direction is allowed to be approximate: per-agent forcing terms pick how
much inner-residual slack the current outer iterate can tolerate, those terms
translate into per-agent splitting thresholds, and a two-stage step-size rule
(centrality-preserving upper bounds, then a linked (beta, theta) contraction of
step and forcing level) keeps every iterate inside the region where the
convergence argument applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import admm, kkt, netsim
from .exceptions import ConfigError, InteriorError, NumericalError, StallError
from .ipm_exact import OuterRecord, agent_converged, trace_row
from .problem import CoupledProblem, tolerance_scale
from .report import SolveReport


@dataclass
class InexactParams:
    eta_max: float = 0.9
    gamma0: float = 0.9
    beta: float = 0.1
    theta: float = 0.95
    eps_sigma: float = 0.1
    rho: float = 0.5
    alpha_or: float = 1.0
    eps: float | None = None
    eps_feas: float | None = None
    max_outer: int = 200
    max_inner: int = 10000
    warm_start: bool = True
    threads: int = 1
    eta_hat_init: float = 0.5
    max_halvings: int = 60
    max_contractions: int = 200
    alpha_floor: float = 1e-12
    termination: str = "merit"  # "merit" (native) or "kkt" (shared exact-method test)

    def validate(self) -> None:
        for name, value in [("eta_max", self.eta_max), ("beta", self.beta),
                            ("theta", self.theta), ("eps_sigma", self.eps_sigma)]:
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not 0.5 <= self.gamma0 < 1:
            raise ConfigError("gamma0 must lie in [1/2, 1)")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if not 1.0 <= self.alpha_or < 2.0:
            raise ConfigError("alpha_or must lie in [1, 2)")
        if self.termination not in ("merit", "kkt"):
            raise ConfigError("termination must be 'merit' or 'kkt'")


@dataclass
class CentralityConstants:
    """Frozen at the starting point; they define the admissible region."""

    tau1: np.ndarray
    tau2: np.ndarray


def centrality_constants(bundles: list[kkt.AgentResiduals]) -> CentralityConstants:
    tau1 = np.empty(len(bundles))
    tau2 = np.empty(len(bundles))
    for i, b in enumerate(bundles):
        if b.r_cent.size == 0 or b.eta_hat <= 0:
            raise InteriorError(f"agent {i}: cannot form centrality constants")
        m_i = b.r_cent.shape[0]
        tau1[i] = float(b.r_cent.min()) / (b.eta_hat / m_i)
        r_norm = math.sqrt(b.kkt_sq)
        tau2[i] = b.eta_hat / max(r_norm, 1e-300)
    return CentralityConstants(tau1, tau2)


@dataclass
class ForcingTerms:
    sigma: float
    eta_hat: float
    eta_bar: float
    mu: float
    sigma_i: np.ndarray
    eta_hat_i: np.ndarray


def choose_forcing(
    bundles: list[kkt.AgentResiduals],
    cc: CentralityConstants,
    gamma: float,
    params: InexactParams,
    m_total: int,
    graph: netsim.AgentGraph,
    log: netsim.MessageLog | None = None,
) -> ForcingTerms:
    """Per-agent forcing terms, then the global min/max reductions.

    Each agent takes the smallest admissible sigma (its lower bound plus
    eps_sigma) for a tentative eta_hat, halving eta_hat until the pair fits
    under eta_max.
    """
    N = len(bundles)
    etas = np.array([b.eta_hat for b in bundles])
    min_eta = netsim.min_consensus(etas, graph, log).value
    if min_eta <= 0:
        raise InteriorError("surrogate gap must be positive")
    sigma_i = np.empty(N)
    eta_hat_i = np.empty(N)
    for i in range(N):
        eh = params.eta_hat_init
        for _ in range(params.max_halvings + 1):
            sig = cc.tau2[i] * gamma * eh * etas[i] / min_eta + params.eps_sigma
            if sig + eh < params.eta_max:
                break
            eh *= 0.5
        else:
            raise NumericalError(f"agent {i}: forcing constraints infeasible")
        sigma_i[i] = sig
        eta_hat_i[i] = eh
    eta_hat = netsim.min_consensus(eta_hat_i, graph, log).value
    sigma = netsim.max_consensus(sigma_i, graph, log).value
    eta_bar = sigma + eta_hat
    mu_i = sigma * etas / m_total
    mu = netsim.min_consensus(mu_i, graph, log).value
    return ForcingTerms(sigma, eta_hat, eta_bar, mu, sigma_i, eta_hat_i)


def admm_thresholds(eta_hat: float, bundles, rho: float, m_total: int, N: int):
    """Per-agent squared-norm thresholds that imply the inner residual bound."""
    vals = np.array([eta_hat * b.eta_hat / m_total for b in bundles])
    eps_pri = (N / 2.0) * vals**2
    eps_dual = (N / 2.0) * (vals / rho) ** 2
    return eps_pri, eps_dual


_GRID = np.linspace(0.0, 1.0, 65)
_BISECTIONS = 40


def _centrality_gap(view, dview, alpha: float, tau1_gamma_over_m: float) -> float:
    s = view[2] + alpha * dview[2]
    lam = view[3] + alpha * dview[3]
    prod = s * lam
    return float(prod.min() - tau1_gamma_over_m * (s @ lam))


def _kkt_norm_at(sub, view, dview, alpha: float) -> float:
    """|R_i(z_i + alpha dz_i)| without interiority requirements."""
    w, x_J, s, lam, v, v_c = (z + alpha * dz for z, dz in zip(view, dview))
    r_dual = sub.grad(w) + sub.ineq_jac(w).T @ lam + sub.A_eq.T @ v + v_c
    r_p1 = sub.ineq(w) + s
    r_p2 = sub.A_eq @ w - sub.b_eq
    r_c = w - x_J
    return math.sqrt(float(r_dual @ r_dual + r_p1 @ r_p1 + r_p2 @ r_p2 + r_c @ r_c))


def _residual_gap(sub, view, dview, alpha: float, tau2_gamma: float) -> float:
    s = view[2] + alpha * dview[2]
    lam = view[3] + alpha * dview[3]
    return float(s @ lam - tau2_gamma * _kkt_norm_at(sub, view, dview, alpha))


def _prefix_root(f) -> float:
    """Largest alpha in [0, 1] with f >= 0 on a 64-cell prefix grid, refined by bisection."""
    f0 = f(0.0)
    if f0 < -1e-10:
        raise InteriorError(f"admissible-region condition violated at the iterate ({f0:.3e})")
    hi_idx = None
    for idx in range(1, _GRID.shape[0]):
        if f(_GRID[idx]) < 0.0:
            hi_idx = idx
            break
    if hi_idx is None:
        return 1.0
    lo, hi = _GRID[hi_idx - 1], _GRID[hi_idx]
    for _ in range(_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return float(lo)


def alpha_bounds(sub, view, dview, tau1: float, tau2: float, gamma: float) -> float:
    """min of the two centrality-preserving step-size upper bounds."""
    m_i = max(sub.n_ineq, 1)
    a1 = _prefix_root(lambda a: _centrality_gap(view, dview, a, tau1 * gamma / m_i))
    a2 = _prefix_root(lambda a: _residual_gap(sub, view, dview, a, tau2 * gamma))
    return min(a1, a2)


def _interior_cap(view, dview) -> float:
    """Hard positivity bound; a numerical guard under the grid's resolution."""
    cap = 1.0
    for z, dz in ((view[2], dview[2]), (view[3], dview[3])):
        neg = dz < 0
        if np.any(neg):
            cap = min(cap, float(np.min(-z[neg] / dz[neg])))
    return 0.999999 * cap


def line_search(sub, view, dview, alpha_init: float, eta_bar: float, beta: float,
                theta: float, merit0: float, max_contractions: int):
    """Contract step and forcing level together until the merit test passes."""
    alpha = alpha_init
    eta = 1.0 - alpha_init * (1.0 - eta_bar)
    for _ in range(max_contractions + 1):
        trial = kkt.agent_residuals_at(sub, view, dview, alpha)
        if math.sqrt(trial.merit_sq) <= (1.0 - beta * (1.0 - eta)) * merit0:
            return alpha, eta
        alpha *= theta
        eta = 1.0 - theta * (1.0 - eta)
    raise StallError(f"agent {sub.index}: inexact line search stalled")


def solve(
    problem: CoupledProblem,
    init: kkt.Iterate | None = None,
    params: InexactParams | None = None,
    log: netsim.MessageLog | None = None,
    inner_cb=None,
    outer_cb=None,
) -> SolveReport:
    params = params or InexactParams()
    params.validate()
    N = problem.n_agents
    m_total = problem.total_ineq
    scale = tolerance_scale(problem)
    eps = params.eps if params.eps is not None else scale
    eps_feas = params.eps_feas if params.eps_feas is not None else scale
    eps_sq_N = eps**2 / N

    graph = netsim.AgentGraph.from_problem(problem)
    it = init.copy() if init is not None else kkt.default_start(problem)
    bundles = kkt.residual_bundles(problem, it)
    cc = centrality_constants(bundles)
    gamma = params.gamma0  # non-increasing schedule, held constant
    trace = [trace_row(problem, it, bundles, 0, 0.0, 0.0, 0)]
    extra_rows = []
    state = None
    total_inner = 0
    max_inner_hits = 0
    termination = "max_outer"

    for l in range(1, params.max_outer + 1):
        try:
            forcing = choose_forcing(bundles, cc, gamma, params, m_total, graph, log)
        except (InteriorError, NumericalError):
            termination = "numerical"
            break
        eps_pri, eps_dual = admm_thresholds(forcing.eta_hat, bundles, params.rho, m_total, N)
        try:
            warm = state.copy_for_warm_start() if (params.warm_start and state) else None
            direction, state, info = admm.run(
                problem, it, forcing.mu, params.rho, eps_pri, eps_dual,
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
        done = [b.merit_sq <= eps_sq_N for b in bundles]

        def agent_alpha(i):
            bound = alpha_bounds(problem.agents[i], views[i], dviews[i],
                                 cc.tau1[i], cc.tau2[i], gamma)
            bound = min(bound, _interior_cap(views[i], dviews[i]))
            if done[i]:
                # Locally converged: the noise-floor merit would reject every
                # step; the decrease test moves to the network merit below.
                return bound, 1.0 - bound * (1.0 - forcing.eta_bar)
            return line_search(problem.agents[i], views[i], dviews[i], bound,
                               forcing.eta_bar, params.beta, params.theta,
                               math.sqrt(bundles[i].merit_sq), params.max_contractions)

        try:
            results = netsim.agent_map(agent_alpha, [(i,) for i in range(N)], params.threads)
        except (StallError, InteriorError):
            termination = "stall"
            break
        alpha = netsim.min_consensus([r[0] for r in results], graph, log).value

        # Re-verify the decrease test at the common step size on the network
        # merit (with the forcing level implied by the common value).
        merit0 = math.sqrt(kkt.merit_norm_sq(bundles))
        stalled = False
        for _ in range(params.max_contractions + 1):
            eta_star = 1.0 - alpha * (1.0 - forcing.eta_bar)
            trial = [kkt.agent_residuals_at(problem.agents[i], views[i], dviews[i], alpha)
                     for i in range(N)]
            if math.sqrt(kkt.merit_norm_sq(trial)) <= (
                1.0 - params.beta * (1.0 - eta_star)
            ) * merit0:
                break
            alpha *= params.theta
        else:
            stalled = True
        if stalled or alpha < params.alpha_floor:
            termination = "stall"
            break

        prev_it = it
        it = it.step(direction, alpha)
        bundles = trial
        trace.append(trace_row(problem, it, bundles, l, forcing.mu, alpha, info.inner_iters))
        if outer_cb is not None:
            outer_cb(OuterRecord(l, prev_it, it, bundles, direction, state, info, forcing.mu,
                                 alpha, forcing=forcing, eps_pri=eps_pri, eps_dual=eps_dual))
        extra_rows.append({
            "l": l,
            "sigma": forcing.sigma,
            "eta_hat": forcing.eta_hat,
            "eta_bar": forcing.eta_bar,
            "eta_star": eta_star,
            "eps_pri_max": float(eps_pri.max()),
            "eps_dual_max": float(eps_dual.max()),
        })
        if params.termination == "merit":
            flags = [b.merit_sq <= eps_sq_N for b in bundles]
        else:
            flags = [agent_converged(b, eps_feas**2 / N, eps / N) for b in bundles]
        if netsim.flag_consensus(flags, graph, log):
            termination = "converged"
            break

    return SolveReport("inexact", it, len(trace) - 1, total_inner, termination, trace,
                       max_inner_hits, extras={"forcing": extra_rows})
