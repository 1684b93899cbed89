"""Differentiable sheaf operators on ``(n, d, c)`` node tensors.

Restriction maps are ``(m, 2, d, d)`` tensors with the smaller endpoint of
each edge in slot 0.  Everything runs in float64.
"""

from __future__ import annotations

import torch

DTYPE = torch.float64


def scatter_edges(src_vals, dst_vals, src, dst, n):
    out = src_vals.new_zeros((n,) + tuple(src_vals.shape[1:]))
    return out.index_add(0, src, src_vals).index_add(0, dst, dst_vals)


def edge_diff(maps, x, src, dst):
    return maps[:, 0] @ x[src] - maps[:, 1] @ x[dst]


def sheaf_laplacian(maps, x, src, dst):
    xe = edge_diff(maps, x, src, dst)
    ft = maps.transpose(-1, -2)
    return scatter_edges(ft[:, 0] @ xe, -(ft[:, 1] @ xe), src, dst, x.shape[0])


def degree_inv_sqrt(maps, src, dst, n, eps):
    """``D^{-1/2}`` blocks, computed outside the autograd graph."""
    with torch.no_grad():
        gram = maps.transpose(-1, -2) @ maps
        deg = scatter_edges(gram[:, 0], gram[:, 1], src, dst, n)
        d = maps.shape[-1]
        deg = deg + eps * torch.eye(d, dtype=maps.dtype)
        w, v = torch.linalg.eigh(deg)
        return (v * w.clamp_min(eps).rsqrt().unsqueeze(-2)) @ v.transpose(-1, -2)


def normalized_sheaf_laplacian(maps, x, src, dst, dis):
    return dis @ sheaf_laplacian(maps, dis @ x, src, dst)


def dual_laplacian(x, fstar, src, dst):
    """Laplacian of the node features acting on transposed maps ``fstar`` (m, 2, d, d)."""
    xu, xv = x[src], x[dst]
    r = xu.transpose(-1, -2) @ fstar[:, 0] - xv.transpose(-1, -2) @ fstar[:, 1]
    return torch.stack([xu @ r, -(xv @ r)], dim=1)


def gcn_propagate(y, src, dst, n):
    """``D^-1/2 (I - A) D^-1/2 y`` with ``D`` the degree matrix of ``A + I``; ``y`` is ``(n, k)``."""
    deg = torch.ones(n, dtype=y.dtype).index_add(0, src, torch.ones(len(src), dtype=y.dtype))
    deg = deg.index_add(0, dst, torch.ones(len(dst), dtype=y.dtype))
    dis = deg.rsqrt()
    z = y * dis[:, None]
    az = torch.zeros_like(z).index_add(0, src, z[dst]).index_add(0, dst, z[src])
    return (z - az) * dis[:, None]


def graph_laplacian_apply(y, src, dst, n):
    """Combinatorial ``(D - A) y`` for any trailing shape."""
    diff = y[src] - y[dst]
    return scatter_edges(diff, -diff, src, dst, n)
