import numpy as np
import pytest

from coupled_ipm import InteriorError, StructureError, generate
from coupled_ipm import kkt
from coupled_ipm.problem import AgentSubproblem, CoupledProblem
from coupled_ipm.saddle import reference_optimum

from conftest import desk_config, random_interior, stack_core


def test_residuals_at_generated_feasible_point():
    prob, x_feas, slacks = generate(desk_config(seed=2), return_certificate=True)
    for sub, s_draw in zip(prob.agents, slacks):
        w = x_feas[sub.J]
        b = kkt.agent_residuals(sub, w, w, s_draw, np.full(sub.n_ineq, 3.0),
                                np.zeros(sub.n_eq), np.zeros(sub.dim))
        assert np.abs(b.r_primal1).max() <= 1e-10
        assert np.abs(b.r_primal2).max() <= 1e-10
        assert np.abs(b.r_c).max() == 0.0


def test_centrality_residual_elementwise():
    sub = AgentSubproblem(0, np.eye(2), np.zeros(2), 0.0,
                          np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([-10.0, -10.0]),
                          np.array([[1.0, 1.0]]), np.array([0.0]), np.array([0, 1]))
    w = np.zeros(2)
    b = kkt.agent_residuals(sub, w, w, np.array([1.0, 2.0]), np.array([3.0, 4.0]),
                            np.zeros(1), np.zeros(2))
    assert np.array_equal(b.r_cent, [3.0, 8.0])
    assert b.eta_hat == 11.0


def test_merit_block_pythagoras(medium_problem):
    it = random_interior(medium_problem, 1)
    bundles = kkt.residual_bundles(medium_problem, it)
    # Stack the full residual vector and compare squared norms.
    stacked = np.concatenate(
        [np.concatenate([b.r_dual, b.r_primal1, b.r_primal2, b.r_c, b.r_cent])
         for b in bundles]
    )
    assert kkt.merit_norm_sq(bundles) == pytest.approx(stacked @ stacked, rel=1e-14)
    assert kkt.surrogate_gap(bundles) == pytest.approx(
        sum(float(it.s[i] @ it.lam[i]) for i in range(medium_problem.n_agents)), rel=1e-14
    )


def test_residuals_at_reference_optimum(small_problem):
    """Build the primal-dual point from the external solver's duals: every
    residual block must vanish to that solver's accuracy, and the consistency
    duals (defined by local stationarity) must sum to zero across owners."""
    import cvxpy as cp

    prob = small_problem
    x = cp.Variable(prob.n)
    obj = 0
    ineq_cons, eq_cons = [], []
    for sub in prob.agents:
        xi = x[sub.J]
        obj = obj + cp.quad_form(xi, cp.psd_wrap(sub.P)) + sub.q @ xi + sub.e
        ineq_cons.append(sub.A_in @ xi + sub.b_in <= 0)
        eq_cons.append(sub.A_eq @ xi == sub.b_eq)
    cp.Problem(cp.Minimize(obj), ineq_cons + eq_cons).solve(solver="CLARABEL")
    xs = np.asarray(x.value)
    W, s, lam, v, v_c = [], [], [], [], []
    for i, sub in enumerate(prob.agents):
        w = xs[sub.J]
        li = np.maximum(np.asarray(ineq_cons[i].dual_value).ravel(), 1e-12)
        vi = np.asarray(eq_cons[i].dual_value).ravel()
        W.append(w)
        s.append(np.maximum(-sub.ineq(w), 1e-12))
        lam.append(li)
        v.append(vi)
        v_c.append(-(sub.grad(w) + sub.A_in.T @ li + sub.A_eq.T @ vi))
    it = kkt.Iterate(W, xs, s, lam, v, v_c)
    assert kkt.consistency_dual_norm(prob, it.v_c) <= 1e-9
    for b in kkt.residual_bundles(prob, it):
        assert np.sqrt(b.merit_sq) <= 1e-6


def test_hpd_trivial_and_rank_one():
    d = 3
    sub = AgentSubproblem(0, 0.5 * np.eye(d), np.zeros(d), 0.0, np.zeros((0, d)),
                          np.zeros(0), np.ones((1, d)), np.zeros(1), np.arange(d))
    H = kkt.hpd(sub, np.zeros(d), np.zeros(0), np.zeros(0))
    assert np.allclose(H, np.eye(d))
    a = np.array([1.0, 2.0, -1.0])
    sub2 = AgentSubproblem(0, 0.5 * np.eye(d), np.zeros(d), 0.0, a[None, :],
                           np.array([-5.0]), np.ones((1, d)), np.zeros(1), np.arange(d))
    # lam/s = 4
    H2 = kkt.hpd(sub2, np.zeros(d), np.array([0.5]), np.array([2.0]))
    assert np.allclose(H2, np.eye(d) + 4.0 * np.outer(a, a))


def test_hpd_matches_r_vec_jacobian(medium_problem):
    """H_pd is the w-Jacobian of the condensed right-hand side (central differences)."""
    prob = medium_problem
    it = random_interior(prob, 5)
    mu = 0.03
    i = 1
    sub = prob.agents[i]
    w0 = it.W[i]
    s0, lam0 = it.s[i], it.lam[i]

    def r_of_w(w):
        b = kkt.agent_residuals(sub, w, it.x[sub.J], s0, lam0, it.v[i], it.v_c[i])
        return kkt.r_vec(sub, b, w, s0, lam0, mu)

    H = kkt.hpd(sub, w0, s0, lam0)
    h = 1e-6
    for k in range(sub.dim):
        e = np.zeros(sub.dim)
        e[k] = h
        col = (r_of_w(w0 + e) - r_of_w(w0 - e)) / (2 * h)
        assert np.abs(col - H[:, k]).max() <= 1e-5 * max(1.0, np.abs(H[:, k]).max())


def test_recover_sl_zero_direction():
    prob = generate(desk_config(seed=3))
    it = random_interior(prob, 2)
    i = 0
    sub = prob.agents[i]
    b = kkt.agent_residuals(sub, *kkt.agent_view(it, prob, i))
    mu = 0.2
    # With dw = 0 and zero inequality residual, ds = 0 and dlam purely recenters.
    b_centered = kkt.AgentResiduals(b.r_dual, np.zeros_like(b.r_primal1), b.r_primal2,
                                    b.r_c, b.r_cent, b.eta_hat, b.merit_sq)
    ds, dlam = kkt.recover_sl(sub, b_centered, it.s[i], it.lam[i], np.zeros(sub.dim), mu,
                              it.W[i])
    assert np.array_equal(ds, np.zeros_like(ds))
    assert np.allclose(dlam, (mu - b.r_cent) / it.s[i])
    # Perfectly centered point with ds = 0 leaves the multipliers untouched.
    mu_c = float(b.r_cent[0]) if b.r_cent.size else 0.0
    b_flat = kkt.AgentResiduals(b.r_dual, np.zeros_like(b.r_primal1), b.r_primal2, b.r_c,
                                np.full_like(b.r_cent, mu_c), b.eta_hat, b.merit_sq)
    _, dlam_c = kkt.recover_sl(sub, b_flat, it.s[i], it.lam[i], np.zeros(sub.dim), mu_c,
                               it.W[i])
    assert np.abs(dlam_c).max() <= 1e-14


@pytest.mark.parametrize("seed", range(4))
def test_elimination_rows_exact(seed):
    """Recovered (ds, dlam) satisfy the linearized slack/centrality rows to
    machine precision for any dw."""
    prob = generate(desk_config(seed=seed))
    it = random_interior(prob, seed + 50)
    mu = 0.07
    rng = np.random.default_rng(seed)
    for i, sub in enumerate(prob.agents):
        b = kkt.agent_residuals(sub, *kkt.agent_view(it, prob, i))
        dw = rng.normal(size=sub.dim)
        ds, dlam = kkt.recover_sl(sub, b, it.s[i], it.lam[i], dw, mu, it.W[i])
        row_p1 = sub.ineq_jac(it.W[i]) @ dw + ds + b.r_primal1
        row_cent = it.lam[i] * ds + it.s[i] * dlam + b.r_cent - mu
        scale = max(1.0, np.abs(ds).max(), np.abs(dlam).max())
        assert np.abs(row_p1).max() <= 1e-12 * scale
        assert np.abs(row_cent).max() <= 1e-12 * scale


def test_newton_direction_contracts_residuals(medium_problem):
    """First-order check of the full dense direction: every residual block
    shrinks by the factor (1 - alpha), with centrality heading to mu."""
    prob = medium_problem
    it = random_interior(prob, 9)
    bundles = kkt.residual_bundles(prob, it)
    mu = 0.05
    d = kkt.solve_dense_kkt(prob, it, mu, bundles)
    alpha = 1e-7
    b2 = kkt.residual_bundles(prob, it.step(d, alpha))
    for b0, b1 in zip(bundles, b2):
        for name in ("r_dual", "r_primal1", "r_primal2", "r_c"):
            v0, v1 = getattr(b0, name), getattr(b1, name)
            if v0.size:
                assert np.abs((v1 - v0) / alpha + v0).max() <= 1e-5 * max(1.0, np.abs(v0).max())
        realized = (b1.r_cent - b0.r_cent) / alpha
        assert np.abs(realized - (mu - b0.r_cent)).max() <= 1e-5 * max(1.0, np.abs(b0.r_cent).max())


def test_dense_kkt_single_agent_reduces_to_single_block():
    cfg = desk_config(seed=8, n_agents=1, size=(6, 6), pool=6)
    prob = generate(cfg)
    sub = prob.agents[0]
    it = random_interior(prob, 3)
    it.W[0] = it.x.copy()  # single agent: w and x coincide up to r_c
    bundles = kkt.residual_bundles(prob, it)
    mu = 0.11
    d = kkt.solve_dense_kkt(prob, it, mu, bundles)
    # Reduced system: [[H, A_eq'], [A_eq, 0]] on (dw, dv).
    H = kkt.hpd(sub, it.W[0], it.s[0], it.lam[0])
    r = kkt.r_vec(sub, bundles[0], it.W[0], it.s[0], it.lam[0], mu)
    p = sub.n_eq
    system = np.block([[H, sub.A_eq.T], [sub.A_eq, np.zeros((p, p))]])
    sol = np.linalg.solve(system, np.concatenate([-r, -bundles[0].r_primal2]))
    assert np.allclose(d.dW[0], sol[: sub.dim], atol=1e-9)
    assert np.allclose(d.dv[0], sol[sub.dim :], atol=1e-9)
    assert np.allclose(d.dx, d.dW[0], atol=1e-9)  # consistency row forces equality


def test_dense_kkt_zero_rhs_gives_zero_direction():
    # Equality-constrained instance (no inequalities) lets us build an exact
    # KKT point, where the direction system's right-hand side vanishes.
    d = 4
    rng = np.random.default_rng(0)
    M = rng.uniform(0.0, 1.0, (d, d))
    P = M.T @ M / d
    A_eq = rng.uniform(0.0, 1.0, (1, d))
    q = rng.uniform(0.0, 1.0, d)
    system = np.block([[2 * P, A_eq.T], [A_eq, np.zeros((1, 1))]])
    w_star_v = np.linalg.solve(system, np.concatenate([-q, [1.0]]))
    w_star, v_star = w_star_v[:d], w_star_v[d:]
    sub = AgentSubproblem(0, P, q, 0.0, np.zeros((0, d)), np.zeros(0), A_eq,
                          np.array([1.0]), np.arange(d))
    prob = CoupledProblem(d, [sub])
    it = kkt.Iterate([w_star.copy()], w_star.copy(), [np.zeros(0)], [np.zeros(0)],
                     [v_star.copy()], [np.zeros(d)])
    direction = kkt.solve_dense_kkt(prob, it, 0.0)
    assert np.abs(stack_core(direction)).max() <= 1e-9


def test_interior_guards():
    prob = generate(desk_config(seed=1))
    it = random_interior(prob, 0)
    sub = prob.agents[0]
    bad_s = it.s[0].copy()
    bad_s[0] = 0.0
    with pytest.raises(InteriorError):
        kkt.agent_residuals(sub, it.W[0], it.x[sub.J], bad_s, it.lam[0], it.v[0], it.v_c[0])
    tiny_s = it.s[0].copy()
    tiny_s[0] = 1e-15
    with pytest.raises(InteriorError):
        kkt.hpd(sub, it.W[0], tiny_s, it.lam[0])
    b = kkt.agent_residuals(sub, *kkt.agent_view(it, prob, 0))
    with pytest.raises(InteriorError):
        kkt.r_vec(sub, b, it.W[0], tiny_s, it.lam[0], 0.1)
    with pytest.raises(InteriorError):
        kkt.recover_sl(sub, b, tiny_s, it.lam[0], np.zeros(sub.dim), 0.1, it.W[0])


def test_dimension_mismatch_raises(small_problem):
    it = random_interior(small_problem, 0)
    sub = small_problem.agents[0]
    with pytest.raises(StructureError):
        kkt.agent_residuals(sub, it.W[0][:-1], it.x[sub.J][:-1], it.s[0], it.lam[0],
                            it.v[0], it.v_c[0][:-1])


def test_default_start_properties(medium_problem):
    it = kkt.default_start(medium_problem, seed=4)
    assert it.strictly_interior()
    assert kkt.consistency_dual_norm(medium_problem, it.v_c) == 0.0
    for i, sub in enumerate(medium_problem.agents):
        assert np.array_equal(it.W[i], it.x[sub.J])
    it2 = kkt.default_start(medium_problem, seed=4)
    assert np.array_equal(it.x, it2.x)


def test_iterate_step_advances_all_blocks(small_problem):
    it = random_interior(small_problem, 6)
    bundles = kkt.residual_bundles(small_problem, it)
    d = kkt.solve_dense_kkt(small_problem, it, 0.05, bundles)
    moved = it.step(d, 0.25)
    for i in range(small_problem.n_agents):
        assert np.allclose(moved.W[i], it.W[i] + 0.25 * d.dW[i])
        assert np.allclose(moved.lam[i], it.lam[i] + 0.25 * d.dlam[i])
    assert np.allclose(moved.x, it.x + 0.25 * d.dx)


def test_dense_cap_guard(monkeypatch, small_problem):
    import coupled_ipm.kkt as kmod

    monkeypatch.setattr(kmod, "_DENSE_DIM_CAP", 10)
    it = random_interior(small_problem, 0)
    with pytest.raises(StructureError):
        kmod.dense_kkt(small_problem, it, 0.1)


def test_reference_optimum_sanity(small_problem):
    prob, x_feas, _ = generate(desk_config(seed=7), return_certificate=True)
    x_opt, p_star = reference_optimum(prob)
    assert p_star <= prob.objective_x(x_feas) + 1e-8
    for sub in prob.agents:
        assert sub.ineq(x_opt[sub.J]).max() <= 1e-7
        assert np.abs(sub.A_eq @ x_opt[sub.J] - sub.b_eq).max() <= 1e-7
