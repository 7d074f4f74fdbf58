"""Distributed computation of the primal-dual direction by operator splitting.

One inner iteration is a synchronous round: every agent solves its proximal
subproblem against a cached Cholesky factor, shared indices are averaged over
their owners, and the scaled dual estimates are updated additively.  The
factor of ``K_i = H_pd^i + rho (I + A_eq' A_eq)`` depends only on the outer
iterate and rho, so exactly one factorization per agent happens per call no
matter how many inner iterations run.

Scaled duals live in the inner state; the emitted Direction carries the
unscaled ones (multiplied by rho at the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kkt, netsim
from .exceptions import NumericalError, StructureError
from .problem import CoupledProblem


@dataclass
class AgentFactorization:
    """Cholesky factor of one agent's proximal system, tagged with the rho it
    was built for; reusing it under a different rho is a contract violation."""

    chol: tuple
    rho: float
    A_eq: np.ndarray
    dim: int


def factorize_agent(sub, H: np.ndarray, rho: float) -> AgentFactorization:
    K = H + rho * (np.eye(sub.dim) + sub.A_eq.T @ sub.A_eq)
    try:
        fac = cho_factor(K)
    except (np.linalg.LinAlgError, ValueError):
        jitter = 1e-12 * np.trace(K) / K.shape[0]
        try:
            fac = cho_factor(K + jitter * np.eye(K.shape[0]))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"agent {sub.index}: proximal system not PD") from exc
    return AgentFactorization(fac, rho, sub.A_eq, sub.dim)


def w_step(
    fact: AgentFactorization,
    r: np.ndarray,
    r_c: np.ndarray,
    r_primal2: np.ndarray,
    dvcbar: np.ndarray,
    dvbar: np.ndarray,
    dx_J: np.ndarray,
    rho: float,
) -> np.ndarray:
    """Exact minimizer of the agent's proximal subproblem."""
    if fact.rho != rho:
        raise StructureError("stale factorization: rho changed since it was built")
    bracket = r + rho * (r_c + dvcbar - dx_J) + rho * (fact.A_eq.T @ (r_primal2 + dvbar))
    return -cho_solve(fact.chol, bracket, check_finite=False)


def x_step(
    problem: CoupledProblem,
    contributions: list[np.ndarray],
    log: netsim.MessageLog | None = None,
) -> np.ndarray:
    """Ownership-averaged update of the coupling direction."""
    return netsim.shared_average(problem, contributions, log)


def dual_step(dvbar, dvcbar, eq_term, w_term, dx_J, r_primal2, r_c):
    """Additive scaled-dual updates; returns fresh arrays."""
    return dvbar + eq_term + r_primal2, dvcbar + w_term - dx_J + r_c


@dataclass
class DirectionState:
    """Inner splitting state, reusable as a warm start for the next call."""

    dW: list[np.ndarray]
    dx: np.ndarray
    dx_prev: np.ndarray
    dvbar: list[np.ndarray]
    dvcbar: list[np.ndarray]
    k: int
    rho: float
    alpha_or: float
    facts: list[AgentFactorization] = field(default_factory=list, repr=False)

    def copy_for_warm_start(self) -> "DirectionState":
        return DirectionState(
            [a.copy() for a in self.dW],
            self.dx.copy(),
            self.dx_prev.copy(),
            [a.copy() for a in self.dvbar],
            [a.copy() for a in self.dvcbar],
            0,
            self.rho,
            self.alpha_or,
        )


@dataclass
class AdmmInfo:
    inner_iters: int
    converged: bool
    n_factorizations: int


def run(
    problem: CoupledProblem,
    iterate: kkt.Iterate,
    mu: float,
    rho: float,
    eps_pri,
    eps_dual,
    warm: DirectionState | None = None,
    alpha_or: float = 1.0,
    max_inner: int = 10000,
    threads: int = 1,
    bundles: list[kkt.AgentResiduals] | None = None,
    graph: netsim.AgentGraph | None = None,
    inner_cb=None,
    log: netsim.MessageLog | None = None,
):
    """Iterate the splitting until all agents pass the three-part stop test.

    ``eps_pri`` / ``eps_dual`` are thresholds on squared norms, scalar or one
    per agent.  Each agent checks, with its own threshold,

        |dx_J(k+1) - dx_J(k)|^2        <= eps_dual_i / N
        |dw - dx_J(k+1) + r_c|^2       <= eps_pri_i / (2N)
        |A_eq dw + r_primal2|^2        <= eps_pri_i / (2N)

    Returns (direction, state, info); hitting ``max_inner`` is flagged in the
    info rather than raised, while NaN anywhere is fatal.
    """
    N = problem.n_agents
    if bundles is None:
        bundles = kkt.residual_bundles(problem, iterate)
    if graph is None:
        graph = netsim.AgentGraph.from_problem(problem)
    eps_pri = np.broadcast_to(np.asarray(eps_pri, dtype=float), (N,))
    eps_dual = np.broadcast_to(np.asarray(eps_dual, dtype=float), (N,))

    subs = problem.agents
    hs = netsim.agent_map(
        lambda i: kkt.hpd(subs[i], iterate.W[i], iterate.s[i], iterate.lam[i]),
        [(i,) for i in range(N)],
        threads,
    )
    rs = [
        kkt.r_vec(subs[i], bundles[i], iterate.W[i], iterate.s[i], iterate.lam[i], mu)
        for i in range(N)
    ]
    facts = netsim.agent_map(
        lambda i: factorize_agent(subs[i], hs[i], rho), [(i,) for i in range(N)], threads
    )

    if warm is not None:
        if warm.rho != rho:
            raise StructureError("warm state built with a different rho")
        dW = [a.copy() for a in warm.dW]
        dvbar = [a.copy() for a in warm.dvbar]
        dvcbar = [a.copy() for a in warm.dvcbar]
        # The coupling direction is part of the splitting state (with the
        # scaled duals); a warm start carries it over directly.
        dx = warm.dx.copy()
    else:
        dW = [np.zeros(sub.dim) for sub in subs]
        dvbar = [np.zeros(sub.n_eq) for sub in subs]
        dvcbar = [np.zeros(sub.dim) for sub in subs]
        # Cold start: initial coupling direction is the ownership average of dW.
        dx = x_step(problem, dW, log)

    vc_over_rho = [iterate.v_c[i] / rho for i in range(N)]
    state = DirectionState(dW, dx, dx.copy(), dvbar, dvcbar, 0, rho, alpha_or)
    converged = False

    def phase_local(i):
        sub = subs[i]
        b = bundles[i]
        dw = w_step(facts[i], rs[i], b.r_c, b.r_primal2, state.dvcbar[i], state.dvbar[i],
                    state.dx[sub.J], rho)
        eq_prod = sub.A_eq @ dw
        if alpha_or != 1.0:
            w_term = alpha_or * dw + (1.0 - alpha_or) * (state.dx[sub.J] - b.r_c)
            eq_term = alpha_or * eq_prod - (1.0 - alpha_or) * b.r_primal2
        else:
            w_term, eq_term = dw, eq_prod
        contrib = w_term + state.dvcbar[i] + vc_over_rho[i] + b.r_c
        return dw, eq_prod, w_term, eq_term, contrib

    def phase_dual(i, dx_new):
        sub = subs[i]
        b = bundles[i]
        dw, eq_prod, w_term, eq_term, _ = locals_k[i]
        nvb, nvcb = dual_step(state.dvbar[i], state.dvcbar[i], eq_term, w_term,
                              dx_new[sub.J], b.r_primal2, b.r_c)
        d_dx = dx_new[sub.J] - state.dx[sub.J]
        rc_new = dw - dx_new[sub.J] + b.r_c
        req = eq_prod + b.r_primal2
        ok = (
            d_dx @ d_dx <= eps_dual[i] / N
            and rc_new @ rc_new <= eps_pri[i] / (2 * N)
            and req @ req <= eps_pri[i] / (2 * N)
        )
        return nvb, nvcb, ok

    for _ in range(max_inner):
        locals_k = netsim.agent_map(phase_local, [(i,) for i in range(N)], threads)
        dx_new = x_step(problem, [lk[4] for lk in locals_k], log)
        if not np.all(np.isfinite(dx_new)):
            raise NumericalError("NaN in the coupling-direction update")
        duals = netsim.agent_map(lambda i: phase_dual(i, dx_new), [(i,) for i in range(N)], threads)
        state.dx_prev = state.dx
        state.dx = dx_new
        state.dW = [lk[0] for lk in locals_k]
        state.dvbar = [d[0] for d in duals]
        state.dvcbar = [d[1] for d in duals]
        state.k += 1
        if inner_cb is not None:
            inner_cb(state)
        if netsim.flag_consensus([d[2] for d in duals], graph):
            converged = True
            break

    ds, dlam = [], []
    for i, sub in enumerate(subs):
        dsi, dli = kkt.recover_sl(sub, bundles[i], iterate.s[i], iterate.lam[i],
                                  state.dW[i], mu, iterate.W[i])
        ds.append(dsi)
        dlam.append(dli)
    direction = kkt.Direction(
        [a.copy() for a in state.dW],
        state.dx.copy(),
        ds,
        dlam,
        [rho * a for a in state.dvbar],
        [rho * a for a in state.dvcbar],
    )
    if direction.has_nan():
        raise NumericalError("NaN in the computed direction")
    state.facts = facts
    return direction, state, AdmmInfo(state.k, converged, len(facts))


def inner_residual_norm_sq(
    problem: CoupledProblem, bundles: list[kkt.AgentResiduals], state: DirectionState
) -> float:
    """Three-term inner residual: the splitting's own view of |r_hat|^2."""
    rho = state.rho
    total = 0.0
    for i, sub in enumerate(problem.agents):
        b = bundles[i]
        d_dx = state.dx_prev[sub.J] - state.dx[sub.J]
        rc = state.dW[i] - state.dx[sub.J] + b.r_c
        req = sub.A_eq @ state.dW[i] + b.r_primal2
        total += rho * rho * (d_dx @ d_dx) + rc @ rc + req @ req
    return float(total)


def direct_residual_blocks(
    problem: CoupledProblem,
    iterate: kkt.Iterate,
    mu: float,
    state: DirectionState,
    bundles: list[kkt.AgentResiduals] | None = None,
) -> dict:
    """Assemble the direction-system residual blocks from first principles.

    Recomputes the condensed Hessians and right-hand sides from the iterate so
    the result is independent of what ``run`` cached.  Blocks returned:
    per-agent stationarity rows, the stacked consistency-dual row (which the
    splitting keeps at zero by construction), and the two per-agent primal
    rows.  The eliminated slack/multiplier rows are identically zero and are
    not represented.
    """
    if bundles is None:
        bundles = kkt.residual_bundles(problem, iterate)
    rho = state.rho
    stationarity, equality, consistency = [], [], []
    for i, sub in enumerate(problem.agents):
        b = bundles[i]
        H = kkt.hpd(sub, iterate.W[i], iterate.s[i], iterate.lam[i])
        r = kkt.r_vec(sub, b, iterate.W[i], iterate.s[i], iterate.lam[i], mu)
        stationarity.append(
            H @ state.dW[i] + sub.A_eq.T @ (rho * state.dvbar[i]) + rho * state.dvcbar[i] + r
        )
        equality.append(sub.A_eq @ state.dW[i] + b.r_primal2)
        consistency.append(state.dW[i] - state.dx[sub.J] + b.r_c)
    cdual = -problem.scatter_sum(
        [iterate.v_c[i] + rho * state.dvcbar[i] for i in range(problem.n_agents)]
    )
    norm_sq = (
        sum(float(v @ v) for v in stationarity)
        + float(cdual @ cdual)
        + sum(float(v @ v) for v in equality)
        + sum(float(v @ v) for v in consistency)
    )
    return {
        "stationarity": stationarity,
        "consistency_dual": cdual,
        "equality": equality,
        "consistency": consistency,
        "norm_sq": norm_sq,
    }
