import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgflow.graphs import (
    EdgeToken,
    GraphError,
    LabeledGraph,
    NodeToken,
    bfs_order,
    from_sequence,
    generic_alphabet,
    is_connected,
    to_sequence,
)


def path3():
    return LabeledGraph.build([0, 0, 0], [(0, 1, 0), (1, 2, 0)])


class TestBfsOrder:
    def test_path_already_ordered(self):
        assert bfs_order(path3()) == [0, 1, 2]

    def test_star_with_offset_center(self):
        # center at index 2, leaves 0,1,3; root 0 reaches 2, then 2 reaches 1,3
        g = LabeledGraph.build([0, 0, 0, 0], [(0, 2, 0), (1, 2, 0), (2, 3, 0)])
        assert bfs_order(g) == [0, 2, 1, 3]

    def test_single_node(self):
        assert bfs_order(LabeledGraph.build([0])) == [0]

    def test_disconnected_names_unreachable(self):
        g = LabeledGraph.build([0, 0, 0], [(0, 1, 0)])
        with pytest.raises(GraphError, match=r"\[2\]"):
            bfs_order(g)

    def test_deterministic(self):
        g = LabeledGraph.build([0] * 6, [(0, 3, 0), (0, 5, 0), (3, 1, 0), (5, 2, 0), (1, 4, 0)])
        assert bfs_order(g) == bfs_order(g) == bfs_order(g)

    def test_empty_graph_rejected(self):
        with pytest.raises(GraphError):
            bfs_order(LabeledGraph.build([]))


class TestSequences:
    def test_single_node(self):
        seq = to_sequence(LabeledGraph.build([1]), no_edge_index=3)
        assert seq == [NodeToken(1)]

    def test_two_nodes_one_edge(self):
        seq = to_sequence(LabeledGraph.build([0, 1], [(0, 1, 0)]), no_edge_index=3)
        assert seq == [NodeToken(0), NodeToken(1), EdgeToken(1, 0, 0)]

    def test_triangle_tokens(self):
        g = LabeledGraph.build([0, 0, 0], [(0, 1, 0), (0, 2, 0), (1, 2, 0)])
        seq = to_sequence(g, no_edge_index=3)
        values = [t.node_type if isinstance(t, NodeToken) else t.edge_type for t in seq]
        assert values == [0, 0, 0, 0, 0, 0]

    def test_token_counts(self):
        g = LabeledGraph.build([0, 1, 0, 1], [(0, 1, 0), (1, 2, 1), (2, 3, 0)])
        seq = to_sequence(g, no_edge_index=2)
        nodes = sum(isinstance(t, NodeToken) for t in seq)
        edges = sum(isinstance(t, EdgeToken) for t in seq)
        assert nodes == 4 and edges == 6  # n and n(n-1)/2

    def test_round_trip_examples(self):
        for g in (LabeledGraph.build([1]),
                  LabeledGraph.build([0, 1], [(0, 1, 0)]),
                  LabeledGraph.build([0, 0, 0], [(0, 1, 0), (0, 2, 0), (1, 2, 0)])):
            assert from_sequence(to_sequence(g, 3), 3) == g

    def test_malformed_sequence_positions(self):
        with pytest.raises(GraphError, match="position 1"):
            from_sequence([NodeToken(0), EdgeToken(1, 0, 0)], no_edge_index=3)
        with pytest.raises(GraphError, match="position 2"):
            from_sequence([NodeToken(0), NodeToken(0), NodeToken(0)], no_edge_index=3)
        with pytest.raises(GraphError, match="truncated"):
            from_sequence([NodeToken(0), NodeToken(0)], no_edge_index=3)


class TestConnectivity:
    def test_empty_graph_is_connected(self):
        assert is_connected(LabeledGraph.build([]))

    def test_two_isolated_nodes(self):
        assert not is_connected(LabeledGraph.build([0, 0]))

    def test_path(self):
        assert is_connected(path3())


def random_connected_graph(rng: np.random.Generator, n: int, k: int = 3, c: int = 2) -> LabeledGraph:
    types = rng.integers(0, k, size=n).tolist()
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((j, i, int(rng.integers(0, c))))
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.integers(0, n, size=2)
        if i != j and not any({a, b} == {int(i), int(j)} for (a, b, _t) in edges):
            edges.append((min(int(i), int(j)), max(int(i), int(j)), int(rng.integers(0, c))))
    return LabeledGraph.build(types, edges)


def test_bfs_round_trip_property():
    rng = np.random.default_rng(7)
    for _ in range(200):
        g = random_connected_graph(rng, int(rng.integers(1, 10)))
        order = bfs_order(g)
        rebuilt = from_sequence(to_sequence(g, 5, order), 5)
        assert rebuilt == g.relabel(order)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_bfs_round_trip_hypothesis(n, seed):
    g = random_connected_graph(np.random.default_rng(seed), n)
    order = bfs_order(g)
    assert from_sequence(to_sequence(g, 5, order), 5) == g.relabel(order)


def test_alphabet_validation():
    with pytest.raises(GraphError):
        generic_alphabet(0, 1)
    alphabet = generic_alphabet(2, 3)
    assert alphabet.no_edge_index == 3
    assert alphabet.num_node_types == 2


def test_graph_validation():
    with pytest.raises(GraphError):
        LabeledGraph(( 0,), frozenset({(0, 0, 0)}))
    with pytest.raises(GraphError):
        LabeledGraph((0, 1), frozenset({(0, 1, 0), (0, 1, 1)}))
    with pytest.raises(GraphError):
        LabeledGraph.build([0], [(0, 1, 0)])
