import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odce.graph import (
    InvalidArcError,
    Network,
    PathTable,
    RoutingError,
    arc_index,
    arc_loads,
    reduce_system,
    routing_matrix,
    shortest_paths,
)
from odce.serialize import read_arc_csv, read_routing_json, write_arc_csv, write_routing_json

import oracles


def detour_costs(net):
    c = np.full(net.n, 100.0)
    c[arc_index(net, 0, 2)] = 10
    c[arc_index(net, 0, 1)] = 2
    c[arc_index(net, 1, 2)] = 3
    return c


class TestArcIndex:
    def test_first_and_last_pair(self):
        net = Network(3)
        assert arc_index(net, 0, 1) == 0
        assert arc_index(net, 2, 1) == 5

    @pytest.mark.parametrize("p", [2, 3, 5, 20])
    def test_bijection(self, p):
        net = Network(p)
        idx = [arc_index(net, i, j) for i in range(p) for j in range(p) if i != j]
        assert sorted(idx) == list(range(p * p - p))
        assert all(net.arc_nodes(k) == (i, j) for k, (i, j) in zip(idx, [
            (i, j) for i in range(p) for j in range(p) if i != j]))

    def test_p5_has_20_arcs(self):
        net = Network(5)
        assert net.n == 20
        assert {arc_index(net, i, j) for i in range(5) for j in range(5) if i != j} == set(range(20))

    @pytest.mark.parametrize("i,j", [(1, 1), (-1, 0), (0, 3), (3, 0)])
    def test_invalid(self, i, j):
        with pytest.raises(InvalidArcError):
            arc_index(Network(3), i, j)

    def test_small_network_rejected(self):
        with pytest.raises(ValueError):
            Network(1)


class TestShortestPaths:
    def test_two_nodes_direct(self):
        net = Network(2)
        t = shortest_paths(net, [3.5, 1.25])
        assert t.dist[0, 1] == 3.5 and t.dist[1, 0] == 1.25
        assert t.path_nodes(0, 1) == [0, 1] and t.path_nodes(1, 0) == [1, 0]

    @pytest.mark.parametrize("p", [3, 4, 6])
    def test_uniform_costs_use_direct_arcs(self, p):
        net = Network(p)
        t = shortest_paths(net, np.ones(net.n))
        assert np.all(t.via == -1)
        assert np.array_equal(routing_matrix(net, t), np.eye(net.n))

    def test_detour(self):
        net = Network(3)
        c = detour_costs(net)
        cost = {(i, j): c[arc_index(net, i, j)] for i, j in net.arcs()}
        best, paths = oracles.enumerate_shortest(3, cost)[(0, 2)]
        assert best == 5 and paths == [(0, 1, 2)]
        t = shortest_paths(net, c)
        assert t.dist[0, 2] == 5
        assert t.path_nodes(0, 2) == [0, 1, 2]

    def test_ties_keep_incumbent(self):
        # direct 0->2 costs 2, detour via 1 also costs 2: keep the direct arc
        net = Network(3)
        c = np.full(net.n, 5.0)
        c[arc_index(net, 0, 2)] = 2
        c[arc_index(net, 0, 1)] = 1
        c[arc_index(net, 1, 2)] = 1
        assert shortest_paths(net, c).path_nodes(0, 2) == [0, 2]

    def test_zero_costs_are_legal(self):
        net = Network(4)
        t = shortest_paths(net, np.zeros(net.n))
        assert np.all(t.dist == 0)
        A = routing_matrix(net, t)
        assert np.all(A.sum(axis=0) >= 1)

    def test_negative_cost_rejected(self):
        with pytest.raises(ValueError):
            shortest_paths(Network(2), [1.0, -1.0])

    @pytest.mark.parametrize("p", [3, 4, 5])
    def test_real_costs_against_enumeration(self, p):
        rng = np.random.default_rng(p)
        net = Network(p)
        for _ in range(20):
            c = rng.random(net.n) * 10
            cost = {(i, j): c[arc_index(net, i, j)] for i, j in net.arcs()}
            ref = oracles.enumerate_shortest(p, cost)
            t = shortest_paths(net, c)
            for (i, k), (best, _) in ref.items():
                assert abs(t.dist[i, k] - best) <= 1e-12
                assert abs(sum(c[a] for a in t.path_arcs(net, i, k)) - t.dist[i, k]) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 5).flatmap(lambda p: st.tuples(
    st.just(p), st.lists(st.integers(0, 50), min_size=p * p - p, max_size=p * p - p))))
def test_table_invariants(case):
    p, costs = case
    net = Network(p)
    c = np.array(costs, float)
    t = shortest_paths(net, c)
    assert np.all(np.diag(t.dist) == 0)
    d = t.dist
    for j in range(p):
        assert np.all(d <= d[:, j, None] + d[None, j, :])
    A = routing_matrix(net, t)
    for col, (i, k) in enumerate(net.arcs()):
        arcs = t.path_arcs(net, i, k)
        assert sum(c[a] for a in arcs) == d[i, k]
        assert set(np.flatnonzero(A[:, col])) == set(arcs)
        assert 1 <= len(arcs) <= p - 1


def test_cyclic_table_detected():
    via = np.array([[-1, 2, -1], [-1, -1, -1], [-1, 0, -1]])
    table = PathTable(np.zeros((3, 3)), via)
    with pytest.raises(RoutingError):
        routing_matrix(Network(3), table)


class TestRoutingAndLoads:
    def test_detour_column(self):
        net = Network(3)
        A = routing_matrix(net, shortest_paths(net, detour_costs(net)))
        col = A[:, arc_index(net, 0, 2)]
        assert set(np.flatnonzero(col)) == {arc_index(net, 0, 1), arc_index(net, 1, 2)}

    def test_column_sums_bounded_random(self):
        rng = np.random.default_rng(7)
        net = Network(5)
        for _ in range(100):
            A = routing_matrix(net, shortest_paths(net, rng.exponential(size=net.n)))
            s = A.sum(axis=0)
            assert s.min() >= 1 and s.max() <= net.p - 1
            assert set(np.unique(A)) <= {0, 1}

    def test_zero_and_identity_loads(self):
        net = Network(4)
        A = np.eye(net.n, dtype=np.int8)
        X = np.arange(net.n, dtype=float)
        assert np.array_equal(arc_loads(A, np.zeros(net.n)), np.zeros(net.n))
        assert np.array_equal(arc_loads(A, X), X)

    def test_detour_load(self):
        net = Network(3)
        A = routing_matrix(net, shortest_paths(net, detour_costs(net)))
        X = np.zeros(net.n)
        X[arc_index(net, 0, 2)] = 1.0
        expect = np.zeros(net.n)
        expect[[arc_index(net, 0, 1), arc_index(net, 1, 2)]] = 1.0
        assert np.array_equal(arc_loads(A, X), expect)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 10), st.floats(0, 10))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        net = Network(4)
        A = routing_matrix(net, shortest_paths(net, rng.random(net.n)))
        X1, X2 = rng.random(net.n), rng.random(net.n)
        lhs = arc_loads(A, a * X1 + b * X2)
        rhs = a * arc_loads(A, X1) + b * arc_loads(A, X2)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            arc_loads(np.eye(3), np.ones(4))


class TestReduceSystem:
    def test_identity(self):
        r = reduce_system(np.eye(6), np.ones(6))
        assert r.A.shape == (6, 6) and r.rank == 6 and r.nullity == 0

    def test_zero_row_removed(self):
        A = np.eye(4)
        A[2, 2] = 0
        Y = np.array([1.0, 2.0, 0.0, 4.0])
        r = reduce_system(A, Y)
        assert r.A.shape == (3, 4)
        assert list(r.kept_rows) == [0, 1, 3]
        assert np.array_equal(r.Y, [1.0, 2.0, 4.0])
        assert r.rank == 3 and r.nullity == 1

    def test_rank_matches_exact_elimination(self):
        rng = np.random.default_rng(11)
        net = Network(4)
        for _ in range(30):
            c = rng.integers(1, 6, net.n).astype(float)
            A = routing_matrix(net, shortest_paths(net, c))
            r = reduce_system(A, A @ np.ones(net.n))
            assert r.rank == oracles.exact_rank(A.tolist())


def test_csv_and_json_roundtrip(tmp_path):
    net = Network(4)
    rng = np.random.default_rng(0)
    v = rng.random(net.n)
    write_arc_csv(tmp_path / "v.csv", net, v)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "tail,head,value" and len(lines) == net.n + 1
    assert lines[1].startswith("0,1,") and lines[-1].startswith("3,2,")
    net2, v2 = read_arc_csv(tmp_path / "v.csv")
    assert net2 == net and np.array_equal(v, v2)

    t = shortest_paths(net, rng.random(net.n))
    A = routing_matrix(net, t)
    write_routing_json(tmp_path / "r.json", net, t, A)
    json.loads((tmp_path / "r.json").read_text())
    net3, t3, A3 = read_routing_json(tmp_path / "r.json")
    assert net3 == net and np.array_equal(A3, A)
    assert np.array_equal(t3.via, t.via) and np.array_equal(t3.dist, t.dist)
