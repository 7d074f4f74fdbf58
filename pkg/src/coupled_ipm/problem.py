"""Data model for loosely coupled QPs, the random instance generator, and index machinery.

A coupled problem is a sum of per-agent quadratic objectives

    f_i(w) = w' P_i w + q_i' w + e_i

subject to affine inequalities ``A_in w + b_in <= 0``, equalities
``A_eq w = b_eq``, and consistency constraints tying each local copy ``w_i``
to the slice ``x[J_i]`` of a global variable.  Selection matrices are never
materialized: every E_J product is an index gather or scatter over ``J_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import GenerationError, StructureError

_RANK_TOL = 1e-10
_PSD_TOL = 1e-10
_FORMAT_VERSION = 1


def lift(x: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Gather ``x[J]`` (the action of the selection matrix E_J)."""
    J = np.asarray(J)
    if J.size and (J.min() < 0 or J.max() >= x.shape[0]):
        raise StructureError(f"index set out of range for vector of length {x.shape[0]}")
    return x[J]


def scatter_add(w: np.ndarray, J: np.ndarray, acc: np.ndarray) -> np.ndarray:
    """Add ``w`` into ``acc`` at positions ``J`` (the action of E_J')."""
    J = np.asarray(J)
    if w.shape[0] != J.shape[0]:
        raise StructureError(f"value/index length mismatch: {w.shape[0]} vs {J.shape[0]}")
    if J.size and (J.min() < 0 or J.max() >= acc.shape[0]):
        raise StructureError(f"index set out of range for accumulator of length {acc.shape[0]}")
    acc[J] += w
    return acc


@dataclass
class AgentSubproblem:
    """One agent's quadratic objective, affine constraints, and global index set.

    Objective convention follows the coupled form: ``w' P w + q' w + e`` (no
    1/2 factor).  ``P`` is symmetrized on construction.
    """

    index: int
    P: np.ndarray
    q: np.ndarray
    e: float
    A_in: np.ndarray
    b_in: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.P = 0.5 * (self.P + self.P.T)
        self.q = np.asarray(self.q, dtype=float)
        self.e = float(self.e)
        self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
        self.b_in = np.asarray(self.b_in, dtype=float)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.J = np.asarray(self.J, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.J.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.A_in.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    # Narrow oracle interface: value/gradient/Hessian of the objective and
    # value/Jacobian of the inequality map.  The QP instantiation is the only
    # one implemented; everything downstream consumes these five callables.
    def objective(self, w: np.ndarray) -> float:
        return float(w @ self.P @ w + self.q @ w + self.e)

    def grad(self, w: np.ndarray) -> np.ndarray:
        return 2.0 * (self.P @ w) + self.q

    def hess(self, w: np.ndarray) -> np.ndarray:
        return 2.0 * self.P

    def ineq(self, w: np.ndarray) -> np.ndarray:
        """G(w) = A_in w + b_in, constrained nonpositive."""
        return self.A_in @ w + self.b_in

    def ineq_jac(self, w: np.ndarray) -> np.ndarray:
        return self.A_in

    def validate(self, n: int) -> None:
        d, m, p = self.dim, self.n_ineq, self.n_eq
        if self.P.shape != (d, d) or self.q.shape != (d,):
            raise StructureError(f"agent {self.index}: objective shape mismatch")
        if self.A_in.shape != (m, d) or self.b_in.shape != (m,):
            raise StructureError(f"agent {self.index}: inequality shape mismatch")
        if self.A_eq.shape != (p, d) or self.b_eq.shape != (p,):
            raise StructureError(f"agent {self.index}: equality shape mismatch")
        if np.any(np.diff(self.J) <= 0):
            raise StructureError(f"agent {self.index}: J must be strictly increasing")
        if self.J.size and (self.J[0] < 0 or self.J[-1] >= n):
            raise StructureError(f"agent {self.index}: J outside [0, {n})")
        if p >= d:
            raise StructureError(f"agent {self.index}: needs n_eq < dim ({p} >= {d})")
        if p > 0:
            sv = np.linalg.svd(self.A_eq, compute_uv=False)
            if np.sum(sv > _RANK_TOL * sv[0]) < p:
                raise StructureError(f"agent {self.index}: A_eq is rank deficient")
        w = np.linalg.eigvalsh(self.P)
        scale = max(abs(w[0]), abs(w[-1]), 1.0)
        if w[0] < -_PSD_TOL * scale:
            raise StructureError(f"agent {self.index}: P not PSD (min eig {w[0]:.3e})")

    def freeze(self) -> None:
        for a in (self.P, self.q, self.A_in, self.b_in, self.A_eq, self.b_eq, self.J):
            a.flags.writeable = False


@dataclass
class CoupledProblem:
    """A validated collection of agents plus precomputed coupling tables.

    The derived tables are the ownership multiplicity ``|I_j|`` for every
    global index and the neighbor sets Ne(i) = {k : J_i and J_k intersect}
    (which include i itself).  E'E is diagonal with the multiplicities on the
    diagonal, so all shared-index averaging reduces to a scatter-sum divided
    by ``multiplicity``.
    """

    n: int
    agents: list[AgentSubproblem]
    multiplicity: np.ndarray = field(init=False)
    neighbors: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        for sub in self.agents:
            sub.validate(self.n)
        self._all_J = np.concatenate([sub.J for sub in self.agents])
        sizes = [sub.dim for sub in self.agents]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.multiplicity = np.bincount(self._all_J, minlength=self.n).astype(np.int64)
        if np.any(self.multiplicity == 0):
            missing = np.flatnonzero(self.multiplicity == 0)
            raise StructureError(f"global indices never referenced: {missing[:8]}...")
        owners = [[] for _ in range(self.n)]
        for i, sub in enumerate(self.agents):
            for j in sub.J:
                owners[j].append(i)
        self.neighbors = []
        for i, sub in enumerate(self.agents):
            ne = set()
            for j in sub.J:
                ne.update(owners[j])
            self.neighbors.append(np.array(sorted(ne), dtype=np.int64))
        for sub in self.agents:
            sub.freeze()
        self.multiplicity.flags.writeable = False

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def total_local_dim(self) -> int:
        """Sum of |J_i|: the number of consistency constraints."""
        return int(self._offsets[-1])

    @property
    def total_ineq(self) -> int:
        return sum(sub.n_ineq for sub in self.agents)

    @property
    def total_eq(self) -> int:
        return sum(sub.n_eq for sub in self.agents)

    def scatter_sum(self, values: list[np.ndarray]) -> np.ndarray:
        """Sum per-agent vectors into global slots: E' applied agent by agent.

        Summation order is the ascending agent index, which keeps reductions
        deterministic regardless of how the per-agent values were produced.
        """
        return np.bincount(self._all_J, weights=np.concatenate(values), minlength=self.n)

    def gather(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[sub.J] for sub in self.agents]

    def objective_w(self, W: list[np.ndarray]) -> float:
        return sum(sub.objective(w) for sub, w in zip(self.agents, W))

    def objective_x(self, x: np.ndarray) -> float:
        return sum(sub.objective(x[sub.J]) for sub in self.agents)


@dataclass
class ProblemGenConfig:
    """Knobs for the random generator (defaults reproduce the reference scale)."""

    n_agents: int = 50
    size_min: int = 55
    size_max: int = 65
    eq_min: int = 7
    eq_max: int = 13
    ineq_min: int = 27
    ineq_max: int = 33
    index_pool: int = 900
    seed: int = 0

    def validate(self) -> None:
        if self.n_agents < 1:
            raise GenerationError("n_agents must be positive")
        for lo, hi, name in [
            (self.size_min, self.size_max, "size"),
            (self.eq_min, self.eq_max, "eq"),
            (self.ineq_min, self.ineq_max, "ineq"),
        ]:
            if lo < 1 or hi < lo:
                raise GenerationError(f"invalid {name} bounds ({lo}, {hi})")
        if self.eq_max >= self.size_min:
            raise GenerationError("equality count bound must stay below the local size bound")
        if self.index_pool < self.size_max:
            raise GenerationError("index pool smaller than the largest local size")


_REDRAW_CAP = 5


def generate(config: ProblemGenConfig, return_certificate: bool = False):
    """Draw a random feasible coupled QP.

    A feasible global point and positive slacks are drawn first and the
    constraint offsets are back-solved from them, so every instance is
    strictly feasible by construction.  Matrix/vector entries are U(0,1)
    except that P_i = M'M for a U(0,1) draw M, which keeps the objective
    convex while preserving the nonnegative entry range.

    Randomness is a single seed expanded through ``SeedSequence.spawn``: one
    child stream per agent (drawn in agent order) plus one stream for the
    global feasible point, so generation is reproducible and per-agent draws
    are independent of agent count bookkeeping.
    """
    config.validate()
    root = np.random.SeedSequence(config.seed)
    global_ss, *agent_ss = root.spawn(config.n_agents + 1)
    agent_rngs = [np.random.default_rng(ss) for ss in agent_ss]

    raw = []
    for i, rng in enumerate(agent_rngs):
        d = int(rng.integers(config.size_min, config.size_max + 1))
        p = int(rng.integers(config.eq_min, config.eq_max + 1))
        m = int(rng.integers(config.ineq_min, config.ineq_max + 1))
        J = np.sort(rng.choice(config.index_pool, size=d, replace=False))
        A_in = rng.uniform(0.0, 1.0, size=(m, d))
        A_eq = None
        for _ in range(_REDRAW_CAP):
            cand = rng.uniform(0.0, 1.0, size=(p, d))
            sv = np.linalg.svd(cand, compute_uv=False)
            if np.sum(sv > _RANK_TOL * sv[0]) == p:
                A_eq = cand
                break
        if A_eq is None:
            raise GenerationError(f"agent {i}: A_eq rank deficient after {_REDRAW_CAP} draws")
        # P = M'M/d keeps the objective convex with entries still inside [0, 1].
        M = rng.uniform(0.0, 1.0, size=(d, d))
        P = (M.T @ M) / d
        q = rng.uniform(0.0, 1.0, size=d)
        e = float(rng.uniform(0.0, 10.0))
        raw.append((d, p, m, J, A_in, A_eq, P, q, e))

    # Compact the drawn pool indices so every global coordinate is owned.
    used = np.unique(np.concatenate([r[3] for r in raw]))
    n = used.shape[0]
    x_feas = np.random.default_rng(global_ss).uniform(-10.0, 10.0, size=n)

    agents = []
    slacks = []
    for i, ((d, p, m, J_raw, A_in, A_eq, P, q, e), rng) in enumerate(zip(raw, agent_rngs)):
        J = np.searchsorted(used, J_raw)
        x_J = x_feas[J]
        s_draw = rng.uniform(1.0, 10.0, size=m)
        b_in = -A_in @ x_J - s_draw
        b_eq = A_eq @ x_J
        agents.append(AgentSubproblem(i, P, q, e, A_in, b_in, A_eq, b_eq, J))
        slacks.append(s_draw)

    problem = CoupledProblem(n, agents)
    if return_certificate:
        return problem, x_feas, slacks
    return problem


def tolerance_scale(problem: CoupledProblem) -> float:
    """Relative termination scale: 1e-6 times the largest data norm.

    The max runs over 1, the spectral norms of the block-diagonal objective
    and constraint matrices, and the Euclidean norms of the stacked constraint
    offsets and linear terms.
    """
    candidates = [1.0]
    for picker in (lambda s: s.P, lambda s: s.A_in, lambda s: s.A_eq):
        blocks = [picker(sub) for sub in problem.agents if picker(sub).size]
        if blocks:
            candidates.append(max(np.linalg.norm(B, 2) for B in blocks))
    for picker in (lambda s: s.b_in, lambda s: s.b_eq, lambda s: s.q):
        stacked = np.concatenate([picker(sub) for sub in problem.agents])
        candidates.append(np.linalg.norm(stacked))
    return 1e-6 * max(candidates)


def save_problem(path, problem: CoupledProblem) -> None:
    """Write a problem to the versioned npz container (format 1).

    Layout: ``version``, ``n``, ``n_agents``, then per agent ``a{i}_P``,
    ``a{i}_q``, ``a{i}_e``, ``a{i}_A_in``, ``a{i}_b_in``, ``a{i}_A_eq``,
    ``a{i}_b_eq``, ``a{i}_J``.  Matrices are stored row-major; the container
    is byte-deterministic for identical inputs.
    """
    payload = {
        "version": np.int64(_FORMAT_VERSION),
        "n": np.int64(problem.n),
        "n_agents": np.int64(problem.n_agents),
    }
    for i, sub in enumerate(problem.agents):
        payload[f"a{i}_P"] = sub.P
        payload[f"a{i}_q"] = sub.q
        payload[f"a{i}_e"] = np.float64(sub.e)
        payload[f"a{i}_A_in"] = sub.A_in
        payload[f"a{i}_b_in"] = sub.b_in
        payload[f"a{i}_A_eq"] = sub.A_eq
        payload[f"a{i}_b_eq"] = sub.b_eq
        payload[f"a{i}_J"] = sub.J
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_problem(path) -> CoupledProblem:
    with np.load(path) as data:
        version = int(data["version"])
        if version != _FORMAT_VERSION:
            raise StructureError(f"unsupported problem container version {version}")
        n = int(data["n"])
        agents = []
        for i in range(int(data["n_agents"])):
            agents.append(
                AgentSubproblem(
                    i,
                    data[f"a{i}_P"],
                    data[f"a{i}_q"],
                    float(data[f"a{i}_e"]),
                    data[f"a{i}_A_in"],
                    data[f"a{i}_b_in"],
                    data[f"a{i}_A_eq"],
                    data[f"a{i}_b_eq"],
                    data[f"a{i}_J"],
                )
            )
    return CoupledProblem(n, agents)
