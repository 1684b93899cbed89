import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sheafdiff.graph import ClassLabels, Graph, connected_components, edge_homophily, graph_laplacian, ring_lattice


def union_find_components(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(sorted(g) for g in groups.values())


def enumerate_ring_condition(N, K):
    mod = N - 1 - K // 2
    return {(i, j) for i in range(N) for j in range(i + 1, N) if 0 < abs(i - j) % mod <= K // 2}


def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError, match="self-loops"):
        Graph(3, [[1, 1]])
    with pytest.raises(ValueError, match="u < v"):
        Graph(3, [[2, 1]])
    with pytest.raises(ValueError, match="duplicate"):
        Graph(3, [[0, 1], [0, 1]])
    with pytest.raises(ValueError, match="out of range"):
        Graph(3, [[0, 3]])


def test_from_edges_canonicalises_and_dedups():
    g = Graph.from_edges(4, [(3, 1), (1, 3), (0, 2), (2, 0), (1, 0)])
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 3]]
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(1, 1)])


def test_ring_lattice_examples():
    g6 = ring_lattice(6, 2)
    assert {tuple(e) for e in g6.edges.tolist()} == {(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)}
    g4 = ring_lattice(4, 2)
    assert {tuple(e) for e in g4.edges.tolist()} == {(0, 1), (1, 2), (2, 3), (0, 3)}
    with pytest.raises(ValueError, match="modulus"):
        ring_lattice(3, 2)
    with pytest.raises(ValueError):
        ring_lattice(10, 3)
    with pytest.raises(ValueError):
        ring_lattice(4, 4)


def test_ring_lattice_exhaustive_degree_and_condition():
    checked = 0
    for N in range(3, 51):
        for K in range(2, N, 2):
            if N - 1 - K // 2 <= K // 2:
                with pytest.raises(ValueError):
                    ring_lattice(N, K)
                continue
            g = ring_lattice(N, K)
            assert {tuple(e) for e in g.edges.tolist()} == enumerate_ring_condition(N, K)
            np.testing.assert_array_equal(g.degrees, K)
            # same as the textbook ring of cyclic distance <= K/2
            cyc = {(i, j) for i in range(N) for j in range(i + 1, N) if min(j - i, N - j + i) <= K // 2}
            assert cyc == enumerate_ring_condition(N, K)
            checked += 1
    assert checked > 500


def test_components_examples():
    assert [c.tolist() for c in connected_components(ring_lattice(6, 2))] == [[0, 1, 2, 3, 4, 5]]
    assert [c.tolist() for c in connected_components(Graph(3, np.zeros((0, 2))))] == [[0], [1], [2]]
    two = Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    got = [c.tolist() for c in connected_components(two)]
    assert got == union_find_components(6, two.edges.tolist()) == [[0, 1, 2], [3, 4, 5]]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24)), max_size=40),
       st.randoms(use_true_random=False))
def test_components_match_union_find_and_permutation(n, pairs, rnd):
    pairs = [(u % n, v % n) for u, v in pairs if u % n != v % n]
    g = Graph.from_edges(n, pairs)
    comps = [c.tolist() for c in connected_components(g)]
    assert comps == union_find_components(n, g.edges.tolist())
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert [c.tolist() for c in connected_components(Graph.from_edges(n, shuffled, sort=False))] == comps


def test_edge_homophily_examples():
    c4 = ring_lattice(4, 2)
    assert edge_homophily(c4, ClassLabels(np.array([0, 1, 0, 1]), 2)) == 0.0
    assert edge_homophily(c4, ClassLabels(np.zeros(4, dtype=int), 2)) == 1.0
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert edge_homophily(tri, ClassLabels(np.array([0, 0, 1]), 2)) == pytest.approx(1 / 3)
    with pytest.raises(ValueError, match="edgeless"):
        edge_homophily(Graph(2, np.zeros((0, 2))), ClassLabels(np.array([0, 1]), 2))


def test_class_labels_validation():
    with pytest.raises(ValueError):
        ClassLabels(np.array([0, 2]), 2)


def test_graph_laplacian_rows_sum_to_zero():
    g = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (0, 4)])
    lap = graph_laplacian(g, dense=True)
    np.testing.assert_array_equal(lap.sum(axis=1), 0)
    np.testing.assert_array_equal(np.diag(lap), g.degrees)
    np.testing.assert_array_equal(lap, lap.T)
