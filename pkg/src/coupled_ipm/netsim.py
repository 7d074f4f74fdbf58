"""Synchronous multi-agent execution substrate.

Agents exchange values over the coupling graph Ne(i), reduce scalars with
flooding min/max consensus, and optionally account every scalar sent.  The
simulation is deterministic: rounds are barriers, logs merge in agent-index
order, and averaging sums contributions in ascending agent index, so results
are identical whatever the host thread count.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .problem import CoupledProblem


@dataclass
class AgentGraph:
    """Communication topology induced by shared global indices."""

    n_agents: int
    neighbors: list[np.ndarray]
    components: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        seen = np.full(self.n_agents, -1, dtype=np.int64)
        comps = []
        for start in range(self.n_agents):
            if seen[start] >= 0:
                continue
            stack, members = [start], []
            seen[start] = len(comps)
            while stack:
                u = stack.pop()
                members.append(u)
                for vtx in self.neighbors[u]:
                    if seen[vtx] < 0:
                        seen[vtx] = len(comps)
                        stack.append(int(vtx))
            comps.append(np.array(sorted(members), dtype=np.int64))
        self.components = comps
        self._component_of = seen

    @classmethod
    def from_problem(cls, problem: CoupledProblem) -> "AgentGraph":
        return cls(problem.n_agents, problem.neighbors)

    @property
    def connected(self) -> bool:
        return len(self.components) == 1


class MessageLog:
    """Per-round scalar-unit accounting on directed edges."""

    def __init__(self):
        self.rows = []  # (round, sender, receiver, scalar_units)
        self.round = 0
        self.total_units = 0

    def record(self, sender: int, receiver: int, units: int) -> None:
        if units < 0:
            raise ValueError("negative payload")
        self.rows.append((self.round, sender, receiver, units))
        self.total_units += units

    def next_round(self) -> None:
        self.round += 1

    def units_in_round(self, r: int) -> int:
        return sum(u for rnd, _, _, u in self.rows if rnd == r)

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(["round", "sender", "receiver", "scalar_units"])
        writer.writerows(self.rows)


@dataclass
class ConsensusResult:
    value: float
    rounds: int
    component_values: list[float] | None = None

    @property
    def multi_component(self) -> bool:
        return self.component_values is not None


def shared_average(
    problem: CoupledProblem, values: list[np.ndarray], log: MessageLog | None = None
) -> np.ndarray:
    """Ownership-average of per-agent contributions, as one global vector.

    Contributions are summed in ascending agent index and divided by the
    multiplicity |I_j|.  With a log attached, each owner pair of each shared
    index accounts one scalar unit per direction, i.e. sum_j |I_j| (|I_j| - 1)
    units per round.
    """
    averaged = problem.scatter_sum(values) / problem.multiplicity
    if log is not None:
        owners = [[] for _ in range(problem.n)]
        for i, sub in enumerate(problem.agents):
            for j in sub.J:
                owners[j].append(i)
        for js in owners:
            for a in js:
                for b in js:
                    if a != b:
                        log.record(a, b, 1)
        log.next_round()
    return averaged


def exchange_shared(
    problem: CoupledProblem, values: list[np.ndarray], log: MessageLog | None = None
) -> list[np.ndarray]:
    """One exchange round: every owner of index j receives all other owners'
    contributions for j and averages locally.  Returns per-agent gathers."""
    averaged = shared_average(problem, values, log)
    return [averaged[sub.J] for sub in problem.agents]


def _flood(values, graph: AgentGraph, reducer, log: MessageLog | None):
    state = np.asarray(values, dtype=float).copy()
    rounds = 0
    for _ in range(graph.n_agents):
        new = state.copy()
        for i in range(graph.n_agents):
            ne = graph.neighbors[i]
            new[i] = reducer(state[ne]) if ne.size else state[i]
            if log is not None:
                for j in ne:
                    if j != i:
                        log.record(int(j), i, 1)
        rounds += 1
        if log is not None:
            log.next_round()
        if np.array_equal(new, state):
            break
        state = new
    return state, rounds


def min_consensus(values, graph: AgentGraph, log: MessageLog | None = None) -> ConsensusResult:
    """Flooding min: every node repeatedly takes the min over its neighborhood.

    Converges within graph-diameter rounds on a connected graph.  On a
    disconnected coupling graph each component only learns its own minimum, so
    the result falls back to an orchestrator-mediated global reduction and the
    per-component minima are reported alongside a warning.
    """
    state, rounds = _flood(values, graph, np.min, log)
    if not graph.connected:
        warnings.warn("coupling graph disconnected; min reduced by the orchestrator")
        comp_vals = [float(np.min(state[c])) for c in graph.components]
        return ConsensusResult(float(min(comp_vals)), rounds, comp_vals)
    return ConsensusResult(float(state[0]), rounds)


def max_consensus(values, graph: AgentGraph, log: MessageLog | None = None) -> ConsensusResult:
    state, rounds = _flood(values, graph, np.max, log)
    if not graph.connected:
        warnings.warn("coupling graph disconnected; max reduced by the orchestrator")
        comp_vals = [float(np.max(state[c])) for c in graph.components]
        return ConsensusResult(float(max(comp_vals)), rounds, comp_vals)
    return ConsensusResult(float(state[0]), rounds)


def flag_consensus(flags, graph: AgentGraph, log: MessageLog | None = None) -> bool:
    """All-true check used for distributed termination tests."""
    result = min_consensus(np.asarray(flags, dtype=float), graph, log)
    return bool(result.value >= 1.0)


def agent_map(fn, args_list, threads: int = 1) -> list:
    """Run one pure function per agent, preserving agent order.

    The parallel path only dispatches independent per-agent work; results are
    collected in submission order, so output is identical for any thread count.
    """
    if threads <= 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda args: fn(*args), args_list))
