"""Layer primitives: affine maps, restriction-map learners and the diffusion steps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .ops import DTYPE, dual_laplacian, normalized_sheaf_laplacian, sheaf_laplacian

ACTIVATIONS = {
    "identity": lambda t: t,
    "elu": F.elu,
    "relu": F.relu,
    "tanh": torch.tanh,
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


class Affine(nn.Module):
    """``y = x W^T + b`` initialised uniformly in ``+-1/sqrt(fan_in)`` from an explicit generator."""

    def __init__(self, n_in: int, n_out: int, bias: bool = True, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        bound = 1.0 / math.sqrt(max(n_in, 1))
        w = (torch.rand(n_out, n_in, generator=generator, dtype=DTYPE) * 2 - 1) * bound
        self.weight = nn.Parameter(w)
        if bias:
            b = (torch.rand(n_out, generator=generator, dtype=DTYPE) * 2 - 1) * bound
            self.bias = nn.Parameter(b)
        else:
            self.register_parameter("bias", None)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"affine map expects width {self.n_in}, got {x.shape[-1]}")
        y = x @ self.weight.T
        return y if self.bias is None else y + self.bias


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activations: tuple
    bias: bool = True

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("need one activation per affine layer")
        for a in self.activations:
            activation(a)

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]


class Mlp(nn.Module):
    def __init__(self, spec: MlpSpec, generator=None):
        super().__init__()
        self.spec = spec
        self.layers = nn.ModuleList(
            Affine(a, b, spec.bias, generator) for a, b in zip(spec.widths[:-1], spec.widths[1:]))

    def forward(self, x):
        for layer, act in zip(self.layers, self.spec.activations):
            x = activation(act)(layer(x))
        return x


def flatten_blocks(x):
    """``(n, d, c)`` node blocks to ``(n, d*c)`` vectors, column-major within a block."""
    return x.transpose(-1, -2).reshape(x.shape[0], -1)


def unflatten_blocks(v, d: int, c: int):
    return v.reshape(v.shape[0], c, d).transpose(-1, -2)


def mlp_restriction_maps(x, src, dst, mlp: Mlp, mode: str = "general"):
    """Restriction maps ``F_{u<e} = MLP(x_u || x_v)`` and ``F_{v<e} = MLP(x_v || x_u)``.

    One shared MLP serves both incidences.  ``mode='diagonal'`` expects ``d``
    outputs and places them on the diagonal.
    """
    n, d, c = x.shape
    flat = flatten_blocks(x)
    if mlp.spec.n_in != 2 * d * c:
        raise ValueError(f"restriction MLP input width must be 2*d*c={2 * d * c}, got {mlp.spec.n_in}")
    fu, fv = flat[src], flat[dst]
    out = mlp(torch.stack([torch.cat([fu, fv], -1), torch.cat([fv, fu], -1)], dim=1))
    if mode == "general":
        if mlp.spec.n_out != d * d:
            raise ValueError(f"general maps need d*d={d * d} outputs, got {mlp.spec.n_out}")
        return out.reshape(len(src), 2, d, d)
    if mode == "diagonal":
        if mlp.spec.n_out != d:
            raise ValueError(f"diagonal maps need d={d} outputs, got {mlp.spec.n_out}")
        return torch.diag_embed(out)
    raise ValueError(f"unknown restriction-map mode {mode!r}")


def risnn_restriction_update(x, prev_maps, src, dst, mlp: Mlp, variant: str = "full"):
    """Maps from the edge conversation ``x_e`` correlated with the private opinion.

    ``x_e = F_u x_u - F_v x_v`` for ``'full'`` and ``x_u - x_v`` for
    ``'NoT'``; each incidence gets ``MLP(vec(x_e x_u^T))`` where ``x_e`` is
    taken from that endpoint's side of the edge.
    """
    n, d, c = x.shape
    if mlp.spec.n_in != d * d or mlp.spec.n_out != d * d:
        raise ValueError(f"rotation-invariant learner must map {d * d} -> {d * d}")
    xu, xv = x[src], x[dst]
    if variant == "full":
        xe = prev_maps[:, 0] @ xu - prev_maps[:, 1] @ xv
    elif variant == "NoT":
        xe = xu - xv
    else:
        raise ValueError(f"unknown RiSNN variant {variant!r}")
    gu = xe @ xu.transpose(-1, -2)
    gv = -xe @ xv.transpose(-1, -2)
    g = torch.stack([gu, gv], dim=1).reshape(len(src), 2, d * d)
    return mlp(g).reshape(len(src), 2, d, d)


def _mix(x, w1, w2):
    y = x if w1 is None else w1 @ x
    return y if w2 is None else y @ w2


def snn_layer(x, maps, src, dst, w1=None, w2=None, sigma="identity", dis=None):
    """``X - sigma(Delta_F (I kron W1) X W2)``; ``dis`` holds ``D^{-1/2}`` blocks when normalising."""
    y = _mix(x, w1, w2)
    lap = sheaf_laplacian(maps, y, src, dst) if dis is None else normalized_sheaf_laplacian(maps, y, src, dst, dis)
    return x - activation(sigma)(lap)


def jdsnn_layer(x, fstar, src, dst, alpha, beta, w1=None, w2=None, w1s=None, w2s=None,
                sigma="identity", sigma_f: Optional[str] = None, dis=None, dual_mode="full"):
    """One joint-diffusion layer returning ``(X(t+1), F*(t+1))``.

    Both updates read the step-t state::

        X(t+1)  = X  - sigma((I - alpha Delta_F) W1 X W2)
        F*(t+1) = F* - sigma_f((I - beta Delta_X) W1* F* W2*)

    ``dual_mode='euler'`` replaces the second line by the parameter-free
    ``F* - Delta_X F*``.  ``fstar`` is ``(m, 2, d, d)`` holding the transposed
    maps; the X update uses their transposes.
    """
    maps = fstar.transpose(-1, -2)
    y = _mix(x, w1, w2)
    lap = sheaf_laplacian(maps, y, src, dst) if dis is None else normalized_sheaf_laplacian(maps, y, src, dst, dis)
    x_new = x - activation(sigma)(y - alpha * lap)
    if dual_mode == "euler":
        f_new = fstar - dual_laplacian(x, fstar, src, dst)
    elif dual_mode == "full":
        z = _mix(fstar, w1s, w2s)
        f_new = fstar - activation(sigma if sigma_f is None else sigma_f)(z - beta * dual_laplacian(x, z, src, dst))
    else:
        raise ValueError(f"unknown dual update mode {dual_mode!r}")
    return x_new, f_new


def identity_maps(m: int, d: int):
    return torch.eye(d, dtype=DTYPE).expand(m, 2, d, d).clone()


def encode_input(raw, d: int, c: int, encoder: Optional[nn.Module] = None, act: str = "identity"):
    """Lay raw ``(n, f_in)`` features out as ``(n, d, c)`` stalk blocks.

    Without an encoder the feature vector fills the block column-major and is
    zero-padded up to ``d*c``.
    """
    n, f_in = raw.shape
    if encoder is not None:
        v = activation(act)(encoder(raw))
        if v.shape[1] != d * c:
            raise ValueError(f"encoder must produce d*c={d * c} features")
    else:
        if f_in > d * c:
            raise ValueError(f"{f_in} raw features do not fit a {d}x{c} block without an encoder")
        v = torch.cat([raw, raw.new_zeros((n, d * c - f_in))], dim=1) if f_in < d * c else raw
    return unflatten_blocks(v, d, c)
