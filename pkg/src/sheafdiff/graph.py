"""Simple undirected graphs with a canonical edge orientation.

Every edge is stored as ``(u, v)`` with ``u < v``; that ordering is the
orientation used by the sheaf coboundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _csgraph_components

__all__ = [
    "Graph",
    "ClassLabels",
    "ring_lattice",
    "connected_components",
    "edge_homophily",
    "graph_laplacian",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph on nodes ``0..n-1``.

    Use :meth:`from_edges` to build one from an arbitrary edge list; the
    constructor expects an already canonical ``(m, 2)`` array and validates it.
    """

    n: int
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 0:
            raise ValueError("node count must be non-negative")
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError("edge endpoint out of range [0, n)")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loops are not allowed")
            if np.any(edges[:, 0] > edges[:, 1]):
                raise ValueError("edges must be stored with u < v")
            keys = edges[:, 0] * self.n + edges[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate edges")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]], sort: bool = True) -> "Graph":
        """Canonicalise an edge list: orient each pair as ``u < v`` and drop duplicates.

        Self-loops are rejected rather than dropped.
        """
        arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(arr) and np.any(arr[:, 0] == arr[:, 1]):
            raise ValueError("self-loops are not allowed")
        arr = np.sort(arr, axis=1)
        # dedup keeps first occurrence so the caller's order survives when sort=False
        _, first = np.unique(arr[:, 0] * max(n, 1) + arr[:, 1], return_index=True)
        arr = arr[np.sort(first)]
        if sort:
            arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
        return cls(n, arr)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    @cached_property
    def adjacency(self) -> list[np.ndarray]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges.tolist():
            nbrs[u].append(v)
            nbrs[v].append(u)
        return [np.array(sorted(a), dtype=np.int64) for a in nbrs]

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edges.ravel(), minlength=self.n) if self.m else np.zeros(self.n, np.int64)
        deg.setflags(write=False)
        return deg

    @cached_property
    def incidence(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse ``(n, m)`` scatter matrices for the source and target endpoints."""
        cols = np.arange(self.m)
        ones = np.ones(self.m)
        inc_src = sp.csr_matrix((ones, (self.src, cols)), shape=(self.n, self.m))
        inc_dst = sp.csr_matrix((ones, (self.dst, cols)), shape=(self.n, self.m))
        return inc_src, inc_dst

    def to_dict(self) -> dict:
        return {"n": int(self.n), "edges": self.edges.tolist()}

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.edges, other.edges)

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.m})"


@dataclass(frozen=True, eq=False)
class ClassLabels:
    labels: np.ndarray
    n_c: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-d array")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.n_c):
            raise ValueError(f"class index outside [0, {self.n_c})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, ClassLabels):
            return NotImplemented
        return self.n_c == other.n_c and np.array_equal(self.labels, other.labels)


def ring_lattice(N: int, K: int) -> Graph:
    """Ring lattice where ``(i, j)`` is an edge iff ``0 < |i-j| mod (N-1-K/2) <= K/2``.

    For ``N - 1 - K/2 > K/2`` this is the usual ring in which every node links
    to its ``K/2`` nearest neighbours on each side.
    """
    if K <= 0 or K % 2:
        raise ValueError(f"K must be a positive even integer, got {K}")
    if K >= N:
        raise ValueError(f"K must be smaller than N (K={K}, N={N})")
    half = K // 2
    modulus = N - 1 - half
    if modulus <= half:
        raise ValueError(f"degenerate ring modulus N-1-K/2={modulus} must exceed K/2={half}")
    i, j = np.triu_indices(N, k=1)
    r = (j - i) % modulus
    keep = (r > 0) & (r <= half)
    return Graph(N, np.stack([i[keep], j[keep]], axis=1))


def connected_components(g: Graph) -> list[np.ndarray]:
    """Connected components as sorted node arrays, ordered by smallest member."""
    if g.n == 0:
        return []
    adj = sp.csr_matrix((np.ones(g.m), (g.src, g.dst)), shape=(g.n, g.n))
    _, comp = _csgraph_components(adj, directed=False)
    blocks: dict[int, list[int]] = {}
    for node, c in enumerate(comp.tolist()):
        blocks.setdefault(c, []).append(node)
    return sorted((np.array(b, dtype=np.int64) for b in blocks.values()), key=lambda b: b[0])


def edge_homophily(g: Graph, labels: ClassLabels) -> float:
    """Fraction of edges whose two endpoints share a class."""
    if len(labels) != g.n:
        raise ValueError("labels must cover every node")
    if g.m == 0:
        raise ValueError("edge homophily is undefined for an edgeless graph")
    lab = labels.labels
    return float(np.mean(lab[g.src] == lab[g.dst]))


def graph_laplacian(g: Graph, dense: bool = False):
    """Combinatorial Laplacian ``L = D - A``."""
    adj = sp.coo_matrix((np.ones(g.m), (g.src, g.dst)), shape=(g.n, g.n))
    adj = (adj + adj.T).tocsr()
    lap = sp.diags(np.asarray(g.degrees, dtype=np.float64)) - adj
    return lap.toarray() if dense else lap.tocsr()
