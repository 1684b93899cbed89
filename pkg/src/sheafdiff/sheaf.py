"""Cellular sheaves on graphs and their linear operators.

Layout conventions (all float64):

* node signal ``x``: shape ``(n*d, c)``; node ``u`` owns rows ``u*d:(u+1)*d``
* edge signal ``y``: shape ``(m*d, c)``; edge ``e`` owns rows ``e*d:(e+1)*d``
* restriction maps: array ``(m, 2, d, d)``; ``maps[e, 0]`` is the map of the
  smaller endpoint of edge ``e`` and ``maps[e, 1]`` the map of the larger one
* restriction stack (the transposed maps): shape ``(2*m*d, d)``; block ``2e``
  holds ``maps[e, 0].T`` and block ``2e+1`` holds ``maps[e, 1].T``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Graph, graph_laplacian

__all__ = [
    "DENSE_GUARD",
    "CellularSheaf",
    "identity_sheaf",
    "random_sheaf",
    "random_orthogonal_sheaf",
    "node_blocks",
    "coboundary_apply",
    "coboundary_transpose",
    "sheaf_laplacian_apply",
    "sheaf_laplacian_dense",
    "sheaf_laplacian_sparse",
    "dirichlet_energy",
    "edge_residuals",
    "degree_blocks",
    "inv_sqrt_blocks",
    "degree_normalized_laplacian_apply",
    "to_restriction_stack",
    "sheaf_from_stack",
    "dual_laplacian_apply",
    "dual_coboundary_dense",
    "harmonic_projection",
]

DENSE_GUARD = 4096
NULL_EIG_TOL = 1e-9


class DenseGuardError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CellularSheaf:
    graph: Graph
    d: int
    maps: np.ndarray

    def __post_init__(self):
        maps = np.array(self.maps, dtype=np.float64)
        expected = (self.graph.m, 2, self.d, self.d)
        if maps.shape != expected:
            raise ValueError(f"restriction maps must have shape {expected}, got {maps.shape}")
        if not np.all(np.isfinite(maps)):
            raise ValueError("restriction maps must be finite")
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.graph.m


def identity_sheaf(g: Graph, d: int) -> CellularSheaf:
    if d < 1:
        raise ValueError("stalk dimension must be >= 1")
    maps = np.broadcast_to(np.eye(d), (g.m, 2, d, d))
    return CellularSheaf(g, d, maps)


def random_sheaf(g: Graph, d: int, rng: np.random.Generator, scale: float = 1.0) -> CellularSheaf:
    return CellularSheaf(g, d, scale * rng.standard_normal((g.m, 2, d, d)))


def random_orthogonal_sheaf(g: Graph, d: int, rng: np.random.Generator) -> CellularSheaf:
    """Restriction maps drawn from the Haar measure on O(d)."""
    a = rng.standard_normal((g.m, 2, d, d))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
    return CellularSheaf(g, d, q)


def node_blocks(x: np.ndarray, n: int, d: int) -> np.ndarray:
    """View a ``(n*d, c)`` signal as ``(n, d, c)``; 1-d input is treated as ``c = 1``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n * d:
        raise ValueError(f"signal must have {n * d} rows, got shape {x.shape}")
    return x.reshape(n, d, x.shape[1])


def _scatter(g: Graph, src_vals: np.ndarray, dst_vals: np.ndarray) -> np.ndarray:
    """Sum per-edge blocks into their endpoints: ``out[u] = sum src_vals[e]`` etc."""
    m = g.m
    tail = src_vals.shape[1:]
    width = int(np.prod(tail))
    inc_src, inc_dst = g.incidence
    out = inc_src @ src_vals.reshape(m, width) + inc_dst @ dst_vals.reshape(m, width)
    return np.asarray(out).reshape((g.n,) + tail)


def _edge_diff(maps: np.ndarray, xb: np.ndarray, src, dst) -> np.ndarray:
    return maps[:, 0] @ xb[src] - maps[:, 1] @ xb[dst]


def coboundary_apply(s: CellularSheaf, x: np.ndarray) -> np.ndarray:
    """``(delta x)_e = F_{u<e} x_u - F_{v<e} x_v`` with ``u < v``."""
    xb = node_blocks(x, s.n, s.d)
    xe = _edge_diff(s.maps, xb, s.graph.src, s.graph.dst)
    return xe.reshape(s.m * s.d, -1)


def coboundary_transpose(s: CellularSheaf, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != s.m * s.d:
        raise ValueError(f"edge signal must have {s.m * s.d} rows, got {y.shape[0]}")
    yb = y.reshape(s.m, s.d, -1)
    ft = np.swapaxes(s.maps, -1, -2)
    out = _scatter(s.graph, ft[:, 0] @ yb, -(ft[:, 1] @ yb))
    return out.reshape(s.n * s.d, -1)


def sheaf_laplacian_apply(s: CellularSheaf, x: np.ndarray) -> np.ndarray:
    """Apply ``Delta_F = delta^T delta`` by traversing the edge list."""
    xb = node_blocks(x, s.n, s.d)
    g = s.graph
    xe = _edge_diff(s.maps, xb, g.src, g.dst)
    ft = np.swapaxes(s.maps, -1, -2)
    out = _scatter(g, ft[:, 0] @ xe, -(ft[:, 1] @ xe))
    return out.reshape(s.n * s.d, -1)


def _guard(size: int):
    if size > DENSE_GUARD:
        raise DenseGuardError(f"dense operator of size {size} exceeds guard {DENSE_GUARD}")


def sheaf_laplacian_sparse(s: CellularSheaf) -> sp.csr_matrix:
    """Sparse ``(n*d, n*d)`` Laplacian assembled block by block from the edge list."""
    n, d, g = s.n, s.d, s.graph
    fu, fv = s.maps[:, 0], s.maps[:, 1]
    ut = np.swapaxes(fu, -1, -2)
    vt = np.swapaxes(fv, -1, -2)
    # blocks: (u,u) += Fu^T Fu, (v,v) += Fv^T Fv, (u,v) -= Fu^T Fv, (v,u) -= Fv^T Fu
    blocks = np.concatenate([ut @ fu, vt @ fv, -(ut @ fv), -(vt @ fu)])
    rows_n = np.concatenate([g.src, g.dst, g.src, g.dst])
    cols_n = np.concatenate([g.src, g.dst, g.dst, g.src])
    ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    rows = (rows_n[:, None, None] * d + ii).ravel()
    cols = (cols_n[:, None, None] * d + jj).ravel()
    lap = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n * d, n * d))
    return lap.tocsr()


def sheaf_laplacian_dense(s: CellularSheaf) -> np.ndarray:
    _guard(s.n * s.d)
    return sheaf_laplacian_sparse(s).toarray()


def dirichlet_energy(s: CellularSheaf, x: np.ndarray) -> float:
    """Squared Frobenius norm of ``delta x`` (summed over channels)."""
    return float(np.sum(coboundary_apply(s, x) ** 2))


def edge_residuals(s: CellularSheaf, x: np.ndarray) -> np.ndarray:
    """Per-edge disagreement ``||F_u x_u - F_v x_v||_F``."""
    xe = coboundary_apply(s, x).reshape(s.m, -1)
    return np.linalg.norm(xe, axis=1)


def degree_blocks(s: CellularSheaf, eps: float = 0.0) -> np.ndarray:
    """Node-diagonal blocks ``sum_e F_{u<e}^T F_{u<e} + eps*I``, shape ``(n, d, d)``."""
    ft = np.swapaxes(s.maps, -1, -2)
    gram = ft @ s.maps
    out = _scatter(s.graph, gram[:, 0], gram[:, 1])
    return out + eps * np.eye(s.d)


def inv_sqrt_blocks(blocks: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(blocks)
    if np.any(w <= 0):
        raise np.linalg.LinAlgError("degree block is not positive definite")
    return (v * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(v, -1, -2)


def degree_normalized_laplacian_apply(s: CellularSheaf, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """``D^{-1/2} Delta_F D^{-1/2} x`` with ``D_u = sum_e F^T F + eps*I``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    dis = inv_sqrt_blocks(degree_blocks(s, eps))
    xb = node_blocks(x, s.n, s.d)
    y = (dis @ xb).reshape(s.n * s.d, -1)
    z = node_blocks(sheaf_laplacian_apply(s, y), s.n, s.d)
    return (dis @ z).reshape(s.n * s.d, -1)


def to_restriction_stack(s: CellularSheaf) -> np.ndarray:
    return np.swapaxes(s.maps, -1, -2).reshape(2 * s.m * s.d, s.d).copy()


def sheaf_from_stack(g: Graph, stack: np.ndarray) -> CellularSheaf:
    stack = np.asarray(stack, dtype=np.float64)
    d = stack.shape[1]
    if stack.shape != (2 * g.m * d, d):
        raise ValueError(f"restriction stack must have shape {(2 * g.m * d, d)}, got {stack.shape}")
    return CellularSheaf(g, d, np.swapaxes(stack.reshape(g.m, 2, d, d), -1, -2))


def _stack_blocks(g: Graph, x: np.ndarray, f: np.ndarray):
    f = np.asarray(f, dtype=np.float64)
    d = f.shape[1] if f.ndim == 2 else 0
    if f.ndim != 2 or f.shape[0] != 2 * g.m * d:
        raise ValueError(f"restriction stack must have shape (2*m*d, d), got {f.shape}")
    xb = node_blocks(x, g.n, d)
    return xb, f.reshape(g.m, 2, d, d), d


def dual_laplacian_apply(g: Graph, x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Laplacian built from the node features acting on the restriction stack.

    For edge ``(u, v)`` with residual ``r = x_u^T F_u^T - x_v^T F_v^T`` the
    output blocks are ``x_u r`` (u side) and ``-x_v r`` (v side).
    """
    xb, fb, d = _stack_blocks(g, x, f)
    xu, xv = xb[g.src], xb[g.dst]
    xut, xvt = np.swapaxes(xu, -1, -2), np.swapaxes(xv, -1, -2)
    r = xut @ fb[:, 0] - xvt @ fb[:, 1]
    out = np.stack([xu @ r, -(xv @ r)], axis=1)
    return out.reshape(2 * g.m * d, d)


def dual_coboundary_dense(g: Graph, x: np.ndarray, d: int) -> np.ndarray:
    """Dense ``delta_X`` mapping the stack (flattened column by column) onto edge rows.

    Only meant for small test instances; ``delta_X^T delta_X`` is block
    structured, so it is applied to each of the ``d`` stack columns alike.
    """
    xb = node_blocks(x, g.n, d)
    c = xb.shape[2]
    _guard(2 * g.m * d)
    mat = np.zeros((g.m * c, 2 * g.m * d))
    for e, (u, v) in enumerate(g.edges.tolist()):
        mat[e * c:(e + 1) * c, (2 * e) * d:(2 * e + 1) * d] = xb[u].T
        mat[e * c:(e + 1) * c, (2 * e + 1) * d:(2 * e + 2) * d] = -xb[v].T
    return mat


def harmonic_projection(s: CellularSheaf, x: np.ndarray) -> np.ndarray:
    """Orthogonal projection of each channel of ``x`` onto ``ker Delta_F``."""
    x = node_blocks(x, s.n, s.d).reshape(s.n * s.d, -1)
    lap = sheaf_laplacian_dense(s)
    w, v = np.linalg.eigh(lap)
    null = v[:, w < NULL_EIG_TOL]
    return null @ (null.T @ x)


def identity_laplacian_reference(g: Graph, d: int) -> np.ndarray:
    """``L(g) kron I_d`` for comparing against the identity sheaf."""
    _guard(g.n * d)
    return np.kron(graph_laplacian(g, dense=True), np.eye(d))
