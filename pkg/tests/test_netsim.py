import io

import numpy as np
import pytest

from coupled_ipm import CoupledProblem, generate
from coupled_ipm.netsim import (
    AgentGraph,
    MessageLog,
    agent_map,
    exchange_shared,
    flag_consensus,
    max_consensus,
    min_consensus,
    shared_average,
)
from coupled_ipm.problem import AgentSubproblem

from conftest import desk_config


def path_graph(n):
    nbrs = []
    for i in range(n):
        ne = [i]
        if i > 0:
            ne.append(i - 1)
        if i < n - 1:
            ne.append(i + 1)
        nbrs.append(np.array(sorted(ne)))
    return AgentGraph(n, nbrs)


def two_component_graph():
    nbrs = [np.array([0, 1]), np.array([0, 1]), np.array([2])]
    return AgentGraph(3, nbrs)


def test_exchange_shared_averages(small_problem):
    prob = small_problem
    rng = np.random.default_rng(0)
    values = [rng.normal(size=sub.dim) for sub in prob.agents]
    gathers = exchange_shared(prob, values)
    expected = prob.scatter_sum(values) / prob.multiplicity
    for sub, g in zip(prob.agents, gathers):
        assert np.allclose(g, expected[sub.J])
    # Single-owner indices pass through unchanged.
    for i, sub in enumerate(prob.agents):
        solo = prob.multiplicity[sub.J] == 1
        assert np.allclose(gathers[i][solo], values[i][solo])


def test_two_owner_average():
    subs = []
    for i in range(2):
        subs.append(AgentSubproblem(i, np.eye(2), np.zeros(2), 0.0,
                                    np.zeros((1, 2)), np.zeros(1),
                                    np.array([[1.0, 0.5]]), np.zeros(1), np.array([0, 1])))
    prob = CoupledProblem(2, subs)
    out = exchange_shared(prob, [np.array([1.0, 1.0]), np.array([3.0, 3.0])])
    assert np.allclose(out[0], [2.0, 2.0])
    assert np.allclose(out[1], [2.0, 2.0])


def test_message_accounting(small_problem):
    prob = small_problem
    log = MessageLog()
    shared_average(prob, [np.ones(sub.dim) for sub in prob.agents], log)
    expected = int(np.sum(prob.multiplicity * (prob.multiplicity - 1)))
    assert log.units_in_round(0) == expected
    assert log.total_units == expected
    buf = io.StringIO()
    log.to_csv(buf)
    assert buf.getvalue().startswith("round,sender,receiver,scalar_units")


def test_min_consensus_path():
    graph = path_graph(3)
    result = min_consensus([3.0, 1.0, 2.0], graph)
    assert result.value == 1.0
    assert result.rounds <= 3
    assert not result.multi_component


def test_min_consensus_all_equal():
    graph = path_graph(4)
    result = min_consensus([2.0] * 4, graph)
    assert result.value == 2.0
    assert result.rounds == 1  # detection round only


@pytest.mark.parametrize("seed", range(5))
def test_min_max_consensus_match_sequential(seed):
    prob = generate(desk_config(seed=seed, n_agents=5, pool=20))
    graph = AgentGraph.from_problem(prob)
    rng = np.random.default_rng(seed)
    values = rng.normal(size=prob.n_agents)
    if graph.connected:
        assert min_consensus(values, graph).value == values.min()
        assert max_consensus(values, graph).value == values.max()


def test_disconnected_fallback():
    graph = two_component_graph()
    with pytest.warns(UserWarning):
        result = min_consensus([5.0, 4.0, 1.0], graph)
    assert result.value == 1.0
    assert result.multi_component
    assert sorted(result.component_values) == [1.0, 4.0]


def test_flag_consensus():
    graph = path_graph(3)
    assert flag_consensus([True, True, True], graph)
    assert not flag_consensus([True, False, True], graph)


def test_graph_components(small_problem):
    graph = AgentGraph.from_problem(small_problem)
    total = sum(len(c) for c in graph.components)
    assert total == small_problem.n_agents


def test_agent_map_thread_equivalence():
    args = [(i,) for i in range(8)]

    def fn(i):
        rng = np.random.default_rng(i)
        return rng.normal(size=4)

    seq = agent_map(fn, args, threads=1)
    par = agent_map(fn, args, threads=4)
    for a, b in zip(seq, par):
        assert np.array_equal(a, b)
