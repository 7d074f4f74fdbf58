import numpy as np
import pytest

from coupled_ipm import CoupledProblem, ProblemGenConfig, generate
from coupled_ipm.kkt import Iterate


def desk_config(seed=0, n_agents=3, size=(5, 8), eq=(1, 2), ineq=(2, 4), pool=14):
    return ProblemGenConfig(
        n_agents=n_agents,
        size_min=size[0],
        size_max=size[1],
        eq_min=eq[0],
        eq_max=eq[1],
        ineq_min=ineq[0],
        ineq_max=ineq[1],
        index_pool=pool,
        seed=seed,
    )


def loose_config(seed=0, n_agents=10):
    """The solver-scale configuration: coupling stays loose (|I_j| small)."""
    return ProblemGenConfig(
        n_agents=n_agents,
        size_min=10,
        size_max=15,
        eq_min=2,
        eq_max=4,
        ineq_min=4,
        ineq_max=8,
        index_pool=60,
        seed=seed,
    )


def random_interior(problem: CoupledProblem, seed: int) -> Iterate:
    """Strictly interior iterate with nonzero residuals and E' v_c = 0."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, problem.n)
    W, s, lam, v, vc_raw = [], [], [], [], []
    for sub in problem.agents:
        W.append(x[sub.J] + rng.uniform(-0.5, 0.5, sub.dim))
        s.append(rng.uniform(0.5, 1.5, sub.n_ineq))
        lam.append(rng.uniform(0.5, 1.5, sub.n_ineq))
        v.append(rng.uniform(-1.0, 1.0, sub.n_eq))
        vc_raw.append(rng.uniform(-1.0, 1.0, sub.dim))
    # Project the consistency duals onto the structurally-zero subspace.
    g = problem.scatter_sum(vc_raw) / problem.multiplicity
    v_c = [u - g[sub.J] for u, sub in zip(vc_raw, problem.agents)]
    return Iterate(W, x, s, lam, v, v_c)


def stack_direction(d):
    return np.concatenate(
        [np.atleast_1d(np.asarray(p)).ravel()
         for p in (d.dW + [d.dx] + d.dv + d.dv_c + d.ds + d.dlam)]
    )


def stack_core(d):
    """The variable block of the coupled direction system (no ds/dlam)."""
    return np.concatenate(
        [np.atleast_1d(np.asarray(p)).ravel() for p in (d.dW + [d.dx] + d.dv + d.dv_c)]
    )


@pytest.fixture(scope="session")
def small_problem():
    return generate(desk_config(seed=7))


@pytest.fixture(scope="session")
def medium_problem():
    return generate(desk_config(seed=3, n_agents=4, size=(6, 10), eq=(1, 3), ineq=(3, 5), pool=20))
