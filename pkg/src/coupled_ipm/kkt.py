"""Primal-dual residuals, merit function, and the coupled direction system.

Per-agent quantities never need global state beyond the gather ``x[J_i]``:
the merit norm satisfies the block identity ``|H(z)|^2 = sum_i |H_i(z_i)|^2``
with blocks (dual, primal-1, primal-2, consistency, centrality).  The dual
residual deliberately omits the ``-sum_i E_i' v_c^i`` term, which stays
structurally zero when the consistency duals are initialized summing to zero
and all agents share one step size; that invariant is checked separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InteriorError, NumericalError, SingularSystemError, StructureError
from .problem import AgentSubproblem, CoupledProblem

_S_FLOOR = 1e-14
_DENSE_DIM_CAP = 2000


@dataclass
class Iterate:
    """Full primal-dual point z = (W, x, s, lambda, v, v_c)."""

    W: list[np.ndarray]
    x: np.ndarray
    s: list[np.ndarray]
    lam: list[np.ndarray]
    v: list[np.ndarray]
    v_c: list[np.ndarray]

    def copy(self) -> "Iterate":
        return Iterate(
            [w.copy() for w in self.W],
            self.x.copy(),
            [s.copy() for s in self.s],
            [l.copy() for l in self.lam],
            [v.copy() for v in self.v],
            [vc.copy() for vc in self.v_c],
        )

    def step(self, d: "Direction", alpha: float) -> "Iterate":
        return Iterate(
            [w + alpha * dw for w, dw in zip(self.W, d.dW)],
            self.x + alpha * d.dx,
            [s + alpha * ds for s, ds in zip(self.s, d.ds)],
            [l + alpha * dl for l, dl in zip(self.lam, d.dlam)],
            [v + alpha * dv for v, dv in zip(self.v, d.dv)],
            [vc + alpha * dvc for vc, dvc in zip(self.v_c, d.dv_c)],
        )

    def strictly_interior(self) -> bool:
        return all(s.min() > 0 for s in self.s if s.size) and all(
            l.min() > 0 for l in self.lam if l.size
        )


@dataclass
class Direction:
    """Search direction with the same block structure as an Iterate.

    Dual direction blocks are unscaled (already multiplied by rho when they
    come out of the splitting iteration).
    """

    dW: list[np.ndarray]
    dx: np.ndarray
    ds: list[np.ndarray]
    dlam: list[np.ndarray]
    dv: list[np.ndarray]
    dv_c: list[np.ndarray]

    def has_nan(self) -> bool:
        chunks = [self.dx] + self.dW + self.ds + self.dlam + self.dv + self.dv_c
        return any(not np.all(np.isfinite(c)) for c in chunks)


@dataclass
class AgentResiduals:
    """One agent's residual blocks at a point, plus its merit contribution."""

    r_dual: np.ndarray
    r_primal1: np.ndarray
    r_primal2: np.ndarray
    r_c: np.ndarray
    r_cent: np.ndarray
    eta_hat: float
    merit_sq: float

    @property
    def primal_sq(self) -> float:
        """Squared norm of the stacked primal block (includes consistency)."""
        return float(
            self.r_primal1 @ self.r_primal1
            + self.r_primal2 @ self.r_primal2
            + self.r_c @ self.r_c
        )

    @property
    def dual_sq(self) -> float:
        return float(self.r_dual @ self.r_dual)

    @property
    def kkt_sq(self) -> float:
        """Squared norm of (r_dual, r_primal1, r_primal2, r_c): the merit
        without the centrality block."""
        return self.dual_sq + self.primal_sq


def _require_interior(s: np.ndarray, lam: np.ndarray) -> None:
    if s.size and s.min() <= 0:
        raise InteriorError(f"slack left the interior (min {s.min():.3e})")
    if lam.size and lam.min() <= 0:
        raise InteriorError(f"multiplier left the interior (min {lam.min():.3e})")


def agent_residuals(
    sub: AgentSubproblem,
    w: np.ndarray,
    x_J: np.ndarray,
    s: np.ndarray,
    lam: np.ndarray,
    v: np.ndarray,
    v_c: np.ndarray,
) -> AgentResiduals:
    if not (w.shape[0] == x_J.shape[0] == v_c.shape[0] == sub.dim):
        raise StructureError(f"agent {sub.index}: primal dimension mismatch")
    if s.shape[0] != sub.n_ineq or lam.shape[0] != sub.n_ineq or v.shape[0] != sub.n_eq:
        raise StructureError(f"agent {sub.index}: dual dimension mismatch")
    _require_interior(s, lam)
    r_dual = sub.grad(w) + sub.ineq_jac(w).T @ lam + sub.A_eq.T @ v + v_c
    r_primal1 = sub.ineq(w) + s
    r_primal2 = sub.A_eq @ w - sub.b_eq
    r_c = w - x_J
    r_cent = lam * s
    eta_hat = float(s @ lam)
    merit_sq = float(
        r_dual @ r_dual
        + r_primal1 @ r_primal1
        + r_primal2 @ r_primal2
        + r_c @ r_c
        + r_cent @ r_cent
    )
    return AgentResiduals(r_dual, r_primal1, r_primal2, r_c, r_cent, eta_hat, merit_sq)


def agent_view(it: Iterate, problem: CoupledProblem, i: int):
    """Agent i's slice of an iterate: (w, x_J, s, lam, v, v_c)."""
    sub = problem.agents[i]
    return (it.W[i], it.x[sub.J], it.s[i], it.lam[i], it.v[i], it.v_c[i])


def direction_view(d: Direction, problem: CoupledProblem, i: int):
    sub = problem.agents[i]
    return (d.dW[i], d.dx[sub.J], d.ds[i], d.dlam[i], d.dv[i], d.dv_c[i])


def agent_residuals_at(sub: AgentSubproblem, view, dview, alpha: float) -> AgentResiduals:
    """Residuals at the displaced point z_i + alpha * dz_i (full recomputation)."""
    shifted = tuple(z + alpha * dz for z, dz in zip(view, dview))
    return agent_residuals(sub, *shifted)


def residual_bundles(problem: CoupledProblem, it: Iterate) -> list[AgentResiduals]:
    return [agent_residuals(problem.agents[i], *agent_view(it, problem, i)) for i in range(problem.n_agents)]


def merit_norm_sq(bundles: list[AgentResiduals]) -> float:
    return float(sum(b.merit_sq for b in bundles))


def surrogate_gap(bundles: list[AgentResiduals]) -> float:
    return float(sum(b.eta_hat for b in bundles))


def consistency_dual_norm(problem: CoupledProblem, v_c: list[np.ndarray]) -> float:
    """Inf-norm of sum_i E_i' v_c^i, which must stay (numerically) zero."""
    return float(np.abs(problem.scatter_sum(v_c)).max())


def hpd(sub: AgentSubproblem, w: np.ndarray, s: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Condensed per-agent Hessian: hess f + sum_j lam_j hess G_j + DG' (lam/s) DG.

    For the affine-inequality QP instantiation the curvature terms of G vanish.
    """
    if s.size and s.min() < _S_FLOOR:
        raise InteriorError(f"agent {sub.index}: slack below floor in hpd")
    H = sub.hess(w).copy()
    if sub.n_ineq:
        DG = sub.ineq_jac(w)
        H += (DG * (lam / s)[:, None]).T @ DG
    return 0.5 * (H + H.T)


def r_vec(
    sub: AgentSubproblem,
    bundle: AgentResiduals,
    w: np.ndarray,
    s: np.ndarray,
    lam: np.ndarray,
    mu: float,
) -> np.ndarray:
    """Condensed right-hand-side vector for the eliminated direction system."""
    if s.size and s.min() < _S_FLOOR:
        raise InteriorError(f"agent {sub.index}: slack below floor in r_vec")
    r = bundle.r_dual.copy()
    if sub.n_ineq:
        DG = sub.ineq_jac(w)
        # Sign of the centering terms follows the Newton linearization of
        # lam*s = mu (row Lam ds + S dlam = mu e - r_cent).
        r += DG.T @ ((lam / s) * bundle.r_primal1 - bundle.r_cent / s + mu / s)
    return r


def recover_sl(
    sub: AgentSubproblem,
    bundle: AgentResiduals,
    s: np.ndarray,
    lam: np.ndarray,
    dw: np.ndarray,
    mu: float,
    w: np.ndarray,
):
    """Closed-form elimination of the slack and multiplier directions."""
    if s.size and s.min() < _S_FLOOR:
        raise InteriorError(f"agent {sub.index}: slack below floor in recover_sl")
    ds = -sub.ineq_jac(w) @ dw - bundle.r_primal1
    dlam = -(lam * ds + bundle.r_cent - mu) / s
    return ds, dlam


@dataclass
class DenseKKTSystem:
    """The coupled direction system in the variables (dW, dx, dv, dv_c)."""

    matrix: np.ndarray
    rhs: np.ndarray
    dims: list[int]
    eq_dims: list[int]
    n: int

    def split(self, sol: np.ndarray):
        total_d = sum(self.dims)
        total_p = sum(self.eq_dims)
        dW, dv, dv_c = [], [], []
        off = 0
        for d in self.dims:
            dW.append(sol[off : off + d])
            off += d
        dx = sol[off : off + self.n]
        off += self.n
        for p in self.eq_dims:
            dv.append(sol[off : off + p])
            off += p
        for d in self.dims:
            dv_c.append(sol[off : off + d])
            off += d
        assert off == sol.shape[0] == 2 * total_d + self.n + total_p
        return dW, dx, dv, dv_c


def dense_kkt(
    problem: CoupledProblem,
    it: Iterate,
    mu: float,
    bundles: list[AgentResiduals] | None = None,
) -> DenseKKTSystem:
    """Assemble the full coupled system (oracle only; no structure exploited)."""
    if bundles is None:
        bundles = residual_bundles(problem, it)
    dims = [sub.dim for sub in problem.agents]
    eq_dims = [sub.n_eq for sub in problem.agents]
    total_d, total_p, n = sum(dims), sum(eq_dims), problem.n
    size = 2 * total_d + n + total_p
    if size > _DENSE_DIM_CAP:
        raise StructureError(f"dense KKT oracle capped at {_DENSE_DIM_CAP} (requested {size})")

    A = np.zeros((size, size))
    rhs = np.zeros(size)
    w_off = np.concatenate([[0], np.cumsum(dims)])
    x0 = total_d
    v_off = x0 + n + np.concatenate([[0], np.cumsum(eq_dims)])
    vc_off = x0 + n + total_p + np.concatenate([[0], np.cumsum(dims)])

    for i, sub in enumerate(problem.agents):
        b = bundles[i]
        rw = slice(w_off[i], w_off[i + 1])
        rv = slice(v_off[i], v_off[i + 1])
        rvc = slice(vc_off[i], vc_off[i + 1])
        H = hpd(sub, it.W[i], it.s[i], it.lam[i])
        r = r_vec(sub, b, it.W[i], it.s[i], it.lam[i], mu)
        # Stationarity rows.
        A[rw, rw] = H
        A[rw, rv] = sub.A_eq.T
        A[rw, rvc] = np.eye(sub.dim)
        rhs[rw.start : rw.stop] = -r
        # Consistency-dual rows: -E' dv_c, rhs E' v_c.
        for local, j in enumerate(sub.J):
            A[x0 + j, vc_off[i] + local] -= 1.0
            rhs[x0 + j] += it.v_c[i][local]
        # Equality rows.
        A[rv, rw] = sub.A_eq
        rhs[rv.start : rv.stop] = -b.r_primal2
        # Consistency rows: dw - E dx.
        A[rvc, rw] = np.eye(sub.dim)
        for local, j in enumerate(sub.J):
            A[vc_off[i] + local, x0 + j] -= 1.0
        rhs[rvc.start : rvc.stop] = -b.r_c
    return DenseKKTSystem(A, rhs, dims, eq_dims, n)


def solve_dense_kkt(
    problem: CoupledProblem,
    it: Iterate,
    mu: float,
    bundles: list[AgentResiduals] | None = None,
) -> Direction:
    """Direct solve of the coupled system; the exact-direction oracle."""
    if bundles is None:
        bundles = residual_bundles(problem, it)
    system = dense_kkt(problem, it, mu, bundles)
    try:
        sol = np.linalg.solve(system.matrix, system.rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"direction system singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalError("non-finite entries in dense KKT solution")
    dW, dx, dv, dv_c = system.split(sol)
    ds, dlam = [], []
    for i, sub in enumerate(problem.agents):
        dsi, dli = recover_sl(sub, bundles[i], it.s[i], it.lam[i], dW[i], mu, it.W[i])
        ds.append(dsi)
        dlam.append(dli)
    return Direction([a.copy() for a in dW], dx.copy(), ds, dlam, [a.copy() for a in dv], [a.copy() for a in dv_c])


def default_start(problem: CoupledProblem, seed: int = 0) -> Iterate:
    """Reference starting point: random global primal, local copies consistent,
    slacks and equality/inequality duals at 10, consistency duals zero.

    Uniform slacks keep the per-agent surrogate gaps balanced (within the
    constraint-count ratio), which the inexact method's forcing-term selection
    needs: residual-sized slacks can skew the gaps by an order of magnitude
    across agents, pushing the admissible forcing terms against their ceiling
    and shrinking the accepted steps to useless sizes.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.uniform(-10.0, 10.0, size=problem.n)
    W, s, lam, v, v_c = [], [], [], [], []
    for sub in problem.agents:
        W.append(x[sub.J].copy())
        s.append(np.full(sub.n_ineq, 10.0))
        lam.append(np.full(sub.n_ineq, 10.0))
        v.append(np.full(sub.n_eq, 10.0))
        v_c.append(np.zeros(sub.dim))
    return Iterate(W, x, s, lam, v, v_c)
