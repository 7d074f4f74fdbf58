"""Dense saddle-point oracle and fixed-point/preconditioner identities.

This module owns the centralized views of the direction computation: the
scaled-dual saddle system, its direct LU solve, the splitting written as a
stationary iteration ``state <- G state + f``, the preconditioner identities
behind that form, and the Gauss-Seidel/Uzawa reading of the primal updates.
Everything here is oracle-only: dense, centralized, and used to verify the
distributed path, never to drive it.

Variable convention (the conversion table to the coupled direction system):

    saddle state = (dW, dx, du)  with  du = (dvbar, dvcbar)  scaled by 1/rho;
    dW, dx        identical to the distributed iteration's values,
    dv   = rho * dvbar,   dv_c = rho * dvcbar  (unscaled dual directions),
    rows (eq, consistency) of the saddle system are the coupled system's rows
    scaled by rho.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kkt
from .exceptions import NumericalError, SingularSystemError, StructureError
from .problem import CoupledProblem

_DIM_CAP = 4000


@dataclass
class SaddleSystem:
    """A_kkt u = b_kkt in the variables (dW, dx, dvbar, dvcbar)."""

    a_kkt: np.ndarray
    b_kkt: np.ndarray
    F1: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    rho: float
    dims: list[int]
    eq_dims: list[int]
    n: int

    @property
    def size(self) -> int:
        return self.a_kkt.shape[0]

    def split(self, sol: np.ndarray):
        dW, dvbar, dvcbar = [], [], []
        off = 0
        for d in self.dims:
            dW.append(sol[off : off + d])
            off += d
        dx = sol[off : off + self.n]
        off += self.n
        for p in self.eq_dims:
            dvbar.append(sol[off : off + p])
            off += p
        for d in self.dims:
            dvcbar.append(sol[off : off + d])
            off += d
        return dW, dx, dvbar, dvcbar

    def pack(self, dW, dx, dvbar, dvcbar) -> np.ndarray:
        return np.concatenate(list(dW) + [dx] + list(dvbar) + list(dvcbar))


def assemble(
    problem: CoupledProblem,
    iterate: kkt.Iterate,
    mu: float,
    rho: float,
    bundles: list[kkt.AgentResiduals] | None = None,
) -> SaddleSystem:
    """Build the scaled saddle system for the direction subproblem."""
    if bundles is None:
        bundles = kkt.residual_bundles(problem, iterate)
    dims = [sub.dim for sub in problem.agents]
    eq_dims = [sub.n_eq for sub in problem.agents]
    td, tp, n = sum(dims), sum(eq_dims), problem.n
    size = 2 * td + n + tp
    if size > _DIM_CAP:
        raise StructureError(f"saddle oracle capped at {_DIM_CAP} (requested {size})")

    F1 = np.zeros((td, td))
    f1 = np.zeros(td)
    A = np.zeros((tp + td, td))
    B = np.zeros((tp + td, n))
    c = np.zeros(tp + td)
    w_off = np.concatenate([[0], np.cumsum(dims)])
    p_off = np.concatenate([[0], np.cumsum(eq_dims)])
    for i, sub in enumerate(problem.agents):
        b = bundles[i]
        rw = slice(w_off[i], w_off[i + 1])
        F1[rw, rw] = kkt.hpd(sub, iterate.W[i], iterate.s[i], iterate.lam[i])
        f1[rw] = kkt.r_vec(sub, b, iterate.W[i], iterate.s[i], iterate.lam[i], mu)
        A[p_off[i] : p_off[i + 1], rw] = sub.A_eq
        A[tp + w_off[i] : tp + w_off[i + 1], rw] = np.eye(sub.dim)
        for local, j in enumerate(sub.J):
            B[tp + w_off[i] + local, j] = -1.0
        c[p_off[i] : p_off[i + 1]] = -b.r_primal2
        c[tp + w_off[i] : tp + w_off[i + 1]] = -b.r_c
    # F2(dx) = (-v_c)' E dx, a linear term only.
    f2 = -problem.scatter_sum(iterate.v_c)

    a_kkt = np.zeros((size, size))
    b_kkt = np.zeros(size)
    iW = slice(0, td)
    ix = slice(td, td + n)
    iu = slice(td + n, size)
    a_kkt[iW, iW] = F1
    a_kkt[iW, iu] = rho * A.T
    a_kkt[ix, iu] = rho * B.T
    a_kkt[iu, iW] = rho * A
    a_kkt[iu, ix] = rho * B
    b_kkt[iW] = -f1
    b_kkt[ix] = -f2
    b_kkt[iu] = rho * c
    return SaddleSystem(a_kkt, b_kkt, F1, f1, f2, A, B, c, rho, dims, eq_dims, n)


@dataclass
class SaddleSolution:
    dW: list[np.ndarray]
    dx: np.ndarray
    dvbar: list[np.ndarray]
    dvcbar: list[np.ndarray]
    vector: np.ndarray

    def to_direction(
        self,
        problem: CoupledProblem,
        iterate: kkt.Iterate,
        mu: float,
        rho: float,
        bundles: list[kkt.AgentResiduals] | None = None,
    ) -> kkt.Direction:
        """Complete the primal-dual direction: rescale duals, recover (ds, dlam)."""
        if bundles is None:
            bundles = kkt.residual_bundles(problem, iterate)
        ds, dlam = [], []
        for i, sub in enumerate(problem.agents):
            dsi, dli = kkt.recover_sl(
                sub, bundles[i], iterate.s[i], iterate.lam[i], self.dW[i], mu, iterate.W[i]
            )
            ds.append(dsi)
            dlam.append(dli)
        return kkt.Direction(
            [a.copy() for a in self.dW],
            self.dx.copy(),
            ds,
            dlam,
            [rho * a for a in self.dvbar],
            [rho * a for a in self.dvcbar],
        )


def direct_solve(system: SaddleSystem) -> SaddleSolution:
    """Dense LU (partial pivoting) solve of the saddle system."""
    try:
        sol = np.linalg.solve(system.a_kkt, system.b_kkt)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"saddle system singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalError("non-finite saddle solution")
    resid = np.linalg.norm(system.a_kkt @ sol - system.b_kkt)
    if resid > 1e-9 * max(1.0, np.linalg.norm(system.b_kkt)):
        raise SingularSystemError(f"saddle solve residual too large ({resid:.3e})")
    dW, dx, dvbar, dvcbar = system.split(sol)
    return SaddleSolution(dW, dx, dvbar, dvcbar, sol)


@dataclass
class FixedPointForm:
    """The splitting as the stationary iteration state <- G state + f."""

    G: np.ndarray
    f: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    m1: np.ndarray
    m2: np.ndarray


def fixed_point_form(system: SaddleSystem) -> FixedPointForm:
    rho, A, B = system.rho, system.A, system.B
    M1 = np.linalg.inv(system.F1 + rho * (A.T @ A))
    M2 = np.linalg.inv(rho * (B.T @ B))
    m1 = -system.f1 + rho * (A.T @ system.c)
    m2 = -system.f2 + rho * (B.T @ system.c)

    td = sum(system.dims)
    n = system.n
    nu = A.shape[0]
    size = td + n + nu
    AMA = A @ M1 @ A.T
    BM2B = B @ M2 @ B.T
    G = np.zeros((size, size))
    iW = slice(0, td)
    ix = slice(td, td + n)
    iu = slice(td + n, size)
    G[iW, ix] = -rho * (M1 @ A.T @ B)
    G[iW, iu] = -rho * (M1 @ A.T)
    G[ix, ix] = rho**2 * (M2 @ B.T @ AMA @ B)
    G[ix, iu] = rho * (M2 @ B.T @ (rho * AMA - np.eye(nu)))
    G[iu, ix] = rho * ((rho * BM2B - np.eye(nu)) @ AMA @ B)
    G[iu, iu] = rho * (rho * BM2B - np.eye(nu)) @ AMA - rho * BM2B + np.eye(nu)

    f = np.zeros(size)
    x_part = M2 @ m2 - rho * (M2 @ B.T @ A @ M1 @ m1)
    f[iW] = M1 @ m1
    f[ix] = x_part
    f[iu] = -system.c + A @ (M1 @ m1) + B @ x_part
    return FixedPointForm(G, f, M1, M2, m1, m2)


def preconditioner_1(system: SaddleSystem) -> np.ndarray:
    """The splitting's preconditioner: G = I - M_pre^{-1} A_kkt, f = M_pre^{-1} b_kkt."""
    rho, A, B = system.rho, system.A, system.B
    td, n, nu = sum(system.dims), system.n, A.shape[0]
    M = np.zeros((td + n + nu, td + n + nu))
    iW = slice(0, td)
    ix = slice(td, td + n)
    iu = slice(td + n, td + n + nu)
    M[iW, iW] = system.F1
    M[iW, ix] = -rho * (A.T @ B)
    M[iW, iu] = rho * A.T
    M[ix, iu] = rho * B.T
    M[iu, iW] = rho * A
    M[iu, ix] = rho * B
    M[iu, iu] = -rho * np.eye(nu)
    return M


def augmented_system(system: SaddleSystem):
    """Optimality conditions of the rho-augmented reformulation.

    Same solution set as the saddle system; identical after applying the
    second preconditioner (returned as the third element).
    """
    rho, A, B = system.rho, system.A, system.B
    td, n, nu = sum(system.dims), system.n, A.shape[0]
    size = td + n + nu
    M1_inv = system.F1 + rho * (A.T @ A)
    M2_inv = rho * (B.T @ B)
    A2 = np.zeros((size, size))
    b2 = np.zeros(size)
    iW = slice(0, td)
    ix = slice(td, td + n)
    iu = slice(td + n, size)
    A2[iW, iW] = M1_inv
    A2[iW, ix] = rho * (A.T @ B)
    A2[iW, iu] = rho * A.T
    A2[ix, iW] = rho * (B.T @ A)
    A2[ix, ix] = M2_inv
    A2[ix, iu] = rho * B.T
    A2[iu, iW] = rho * A
    A2[iu, ix] = rho * B
    b2[iW] = -system.f1 + rho * (A.T @ system.c)
    b2[ix] = -system.f2 + rho * (B.T @ system.c)
    b2[iu] = rho * system.c
    M_pre2 = np.eye(size)
    M_pre2[iW, iu] = -A.T
    M_pre2[ix, iu] = -B.T
    return A2, b2, M_pre2


def fixed_point_iterate(form: FixedPointForm, state: np.ndarray, steps: int) -> list[np.ndarray]:
    """Run the stationary iteration, returning the states after each step."""
    out = []
    cur = state
    for _ in range(steps):
        cur = form.G @ cur + form.f
        out.append(cur)
    return out


def gauss_seidel_sweep(system: SaddleSystem, form: FixedPointForm, state: np.ndarray):
    """One block Gauss-Seidel pass over the augmented primal equations.

    Returns the (dW, dx) that the sweep produces from the given state; by the
    Uzawa equivalence this must match the splitting's primal updates.
    """
    rho, A, B = system.rho, system.A, system.B
    td, n = sum(system.dims), system.n
    dx = state[td : td + n]
    du = state[td + n :]
    dW_next = form.M1 @ (form.m1 - rho * (A.T @ du) - rho * (A.T @ (B @ dx)))
    dx_next = form.M2 @ (form.m2 - rho * (B.T @ du) - rho * (B.T @ (A @ dW_next)))
    return dW_next, dx_next


def gauss_seidel_check(system: SaddleSystem, trace: list[np.ndarray], tol: float = 1e-9) -> bool:
    """Verify each transition of a splitting trace against one GS sweep."""
    form = fixed_point_form(system)
    td, n = sum(system.dims), system.n
    for prev, nxt in zip(trace[:-1], trace[1:]):
        dW_gs, dx_gs = gauss_seidel_sweep(system, form, prev)
        if np.linalg.norm(dW_gs - nxt[:td]) > tol or np.linalg.norm(dx_gs - nxt[td : td + n]) > tol:
            return False
    return True


def spectral_radius(G: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(G)).max())


def state_vector(problem: CoupledProblem, state) -> np.ndarray:
    """Pack a distributed DirectionState into the saddle state layout."""
    return np.concatenate(list(state.dW) + [state.dx] + list(state.dvbar) + list(state.dvcbar))


def reference_optimum(problem: CoupledProblem, solver: str = "CLARABEL"):
    """Independent high-accuracy optimum of the coupled QP (external solver).

    Used only as a comparison oracle for objective values; the in-repo solvers
    never call it.
    """
    import cvxpy as cp

    x = cp.Variable(problem.n)
    obj = 0
    cons = []
    for sub in problem.agents:
        xi = x[sub.J]
        obj = obj + cp.quad_form(xi, cp.psd_wrap(sub.P)) + sub.q @ xi + sub.e
        if sub.n_ineq:
            cons.append(sub.A_in @ xi + sub.b_in <= 0)
        if sub.n_eq:
            cons.append(sub.A_eq @ xi == sub.b_eq)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=solver)
    if prob.status != "optimal":
        raise NumericalError(f"reference solve ended with status {prob.status}")
    return np.asarray(x.value), float(prob.value)
