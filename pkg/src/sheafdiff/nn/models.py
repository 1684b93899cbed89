"""Node classifiers built from the diffusion layers.

Every graph model shares the same shell: an optional affine encoder into
``(n, d, c)`` stalk blocks, ``layers`` diffusion layers, and an affine decoder
from the flattened block to class logits.  The ``MLPBaseline`` is a single
affine map of the raw features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
import torch
from torch import nn

from ..synth import Dataset
from .layers import (
    Affine,
    Mlp,
    MlpSpec,
    activation,
    encode_input,
    flatten_blocks,
    identity_maps,
    jdsnn_layer,
    mlp_restriction_maps,
    risnn_restriction_update,
    snn_layer,
)
from .ops import DTYPE, degree_inv_sqrt, gcn_propagate

VARIANTS = (
    "SNN", "DiagSNN", "VanillaSheaf", "GCN", "MLPBaseline",
    "JdSNN", "JdSNN_NoW", "JdSNN_W0", "RiSNN", "RiSNN_NoT",
)
SHEAF_VARIANTS = ("SNN", "DiagSNN", "VanillaSheaf", "JdSNN", "JdSNN_NoW", "JdSNN_W0", "RiSNN", "RiSNN_NoT")
JOINT_VARIANTS = ("JdSNN", "JdSNN_NoW", "JdSNN_W0")


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    d: int = 3
    c: int = 1
    layers: int = 2
    alpha: float = 1.0
    beta: float = 1.0
    normalization: str = "degree"
    sigma: str = "identity"
    use_W1_W2: bool = False
    encoder: bool = True
    encoder_act: str = "elu"
    train_decoder: bool = True
    sheaf_act: str = "tanh"
    eps: float = 1e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.d < 1 or self.c < 1 or self.layers < 1:
            raise ValueError("d, c and layers must be positive")
        if self.normalization not in ("none", "degree"):
            raise ValueError("normalization must be 'none' or 'degree'")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        for a in (self.sigma, self.encoder_act, self.sheaf_act):
            activation(a)

    def to_dict(self):
        return asdict(self)


def preset(variant: str, **overrides) -> ModelConfig:
    """Synthetic-benchmark configuration: ``W1 = W2 = I`` and identity ``sigma``.

    Joint-diffusion runs and the baselines use 3-d stalks with one channel,
    rotation-invariant runs 3-d stalks with five channels.
    """
    c = 5 if variant.startswith("RiSNN") else 1
    base = ModelConfig(variant=variant, d=3, c=c, layers=2, use_W1_W2=False, sigma="identity")
    return replace(base, **overrides)


@dataclass
class GraphData:
    x: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    y: torch.Tensor
    masks: dict
    n_classes: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return len(self.src)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "GraphData":
        masks = {k: torch.from_numpy(ds.mask(k)) for k in ds.splits}
        return cls(
            x=torch.as_tensor(np.asarray(ds.features), dtype=DTYPE),
            src=torch.as_tensor(ds.graph.src.copy(), dtype=torch.long),
            dst=torch.as_tensor(ds.graph.dst.copy(), dtype=torch.long),
            y=torch.as_tensor(ds.labels.labels.copy(), dtype=torch.long),
            masks=masks,
            n_classes=ds.labels.n_c,
        )

    @classmethod
    def from_arrays(cls, x, edges, y, n_classes, masks=None) -> "GraphData":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        x = torch.as_tensor(np.asarray(x), dtype=DTYPE)
        n = x.shape[0]
        if masks is None:
            masks = {"train": torch.ones(n, dtype=torch.bool)}
        return cls(x, torch.as_tensor(edges[:, 0].copy()), torch.as_tensor(edges[:, 1].copy()),
                   torch.as_tensor(np.asarray(y), dtype=torch.long), masks, n_classes)


def _square(d, generator, noise=0.1):
    """Learnable near-identity ``d x d`` matrix."""
    w = torch.eye(d, dtype=DTYPE) + noise * torch.randn(d, d, generator=generator, dtype=DTYPE)
    return nn.Parameter(w)


class NodeClassifier(nn.Module):
    """Shared encoder / decoder shell; subclasses implement :meth:`propagate`."""

    def __init__(self, config: ModelConfig, in_features: int, n_classes: int, generator):
        super().__init__()
        self.config = config
        self.in_features = in_features
        self.n_classes = n_classes
        d, c = config.d, config.c
        self.encoder = Affine(in_features, d * c, True, generator) if config.encoder else None
        self.decoder = Affine(d * c, n_classes, True, generator)
        if not config.train_decoder:
            self.decoder.requires_grad_(False)

    def encode(self, data: GraphData):
        cfg = self.config
        return encode_input(data.x, cfg.d, cfg.c, self.encoder, cfg.encoder_act)

    def forward(self, data: GraphData, norm_cache: Optional[dict] = None, return_state: bool = False):
        x = self.encode(data)
        x, extras = self.propagate(x, data, norm_cache)
        logits = self.decoder(flatten_blocks(x))
        return (logits, extras) if return_state else logits

    def propagate(self, x, data, norm_cache):
        raise NotImplementedError

    def _dis(self, key, maps, data, norm_cache):
        if self.config.normalization != "degree":
            return None
        if norm_cache is not None and key in norm_cache:
            return norm_cache[key]
        dis = degree_inv_sqrt(maps, data.src, data.dst, data.n, self.config.eps)
        if norm_cache is not None:
            norm_cache[key] = dis
        return dis

    def param_groups(self) -> dict:
        """Learnable parameter names grouped as sheaf / diffusion / io."""
        groups = {"sheaf": [], "diffusion": [], "io": []}
        for name, p in self.named_parameters():
            if not p.requires_grad:
                continue
            if name.startswith(("encoder.", "decoder.")):
                groups["io"].append(name)
            elif name.startswith(("sheaf", "w1s", "w2s")):
                groups["sheaf"].append(name)
            else:
                groups["diffusion"].append(name)
        return groups


class MLPBaseline(nn.Module):
    """Single affine layer with identity activation on the raw features."""

    def __init__(self, config: ModelConfig, in_features: int, n_classes: int, generator):
        super().__init__()
        self.config = config
        self.in_features = in_features
        self.n_classes = n_classes
        self.decoder = Affine(in_features, n_classes, True, generator)
        if not config.train_decoder:
            self.decoder.requires_grad_(False)

    def forward(self, data: GraphData, norm_cache=None, return_state=False):
        logits = self.decoder(data.x)
        return (logits, {}) if return_state else logits

    def param_groups(self):
        return {"sheaf": [], "diffusion": [],
                "io": [n for n, p in self.named_parameters() if p.requires_grad]}


class GCN(NodeClassifier):
    """``X - sigma(D^-1/2 (I - A) D^-1/2 X W)`` on flattened node blocks."""

    def __init__(self, config, in_features, n_classes, generator):
        super().__init__(config, in_features, n_classes, generator)
        k = config.d * config.c
        self.weights = nn.ParameterList(_square(k, generator) for _ in range(config.layers))

    def propagate(self, x, data, norm_cache):
        n, d, c = x.shape
        h = flatten_blocks(x)
        act = activation(self.config.sigma)
        for w in self.weights:
            h = h - act(gcn_propagate(h @ w, data.src, data.dst, n))
        return h.reshape(n, c, d).transpose(-1, -2), {}


class SheafNet(NodeClassifier):
    """Discrete sheaf diffusion with fixed, MLP-learned or rotation-invariant maps."""

    def __init__(self, config, in_features, n_classes, generator):
        super().__init__(config, in_features, n_classes, generator)
        d, c, L = config.d, config.c, config.layers
        v = config.variant
        if v in ("SNN", "DiagSNN"):
            out = d * d if v == "SNN" else d
            spec = MlpSpec((2 * d * c, out), (config.sheaf_act,))
            self.sheaf_learners = nn.ModuleList(Mlp(spec, generator) for _ in range(L))
        elif v in ("RiSNN", "RiSNN_NoT"):
            spec = MlpSpec((d * d, d * d), (config.sheaf_act,), bias=False)
            self.sheaf_learners = nn.ModuleList(Mlp(spec, generator) for _ in range(L))
        else:
            self.sheaf_learners = None
        if config.use_W1_W2:
            self.w1 = nn.ParameterList(_square(d, generator) for _ in range(L))
            self.w2 = nn.ParameterList(_square(c, generator) for _ in range(L))
        else:
            self.w1 = self.w2 = None

    def layer_maps(self, t, x, prev, data):
        v = self.config.variant
        if v == "VanillaSheaf":
            return prev
        if v in ("SNN", "DiagSNN"):
            mode = "general" if v == "SNN" else "diagonal"
            return mlp_restriction_maps(x, data.src, data.dst, self.sheaf_learners[t], mode)
        variant = "full" if v == "RiSNN" else "NoT"
        return risnn_restriction_update(x, prev, data.src, data.dst, self.sheaf_learners[t], variant)

    def propagate(self, x, data, norm_cache):
        cfg = self.config
        maps = identity_maps(data.m, cfg.d)
        history = []
        for t in range(cfg.layers):
            maps = self.layer_maps(t, x, maps, data)
            history.append(maps)
            dis = self._dis(t, maps, data, norm_cache)
            w1 = self.w1[t] if self.w1 is not None else None
            w2 = self.w2[t] if self.w2 is not None else None
            x = snn_layer(x, maps, data.src, data.dst, w1, w2, cfg.sigma, dis)
        return x, {"maps": history}


class JointSheafNet(NodeClassifier):
    """Joint diffusion of node features and transposed restriction maps."""

    def __init__(self, config, in_features, n_classes, generator):
        super().__init__(config, in_features, n_classes, generator)
        d, c, L = config.d, config.c, config.layers
        v = config.variant
        if v == "JdSNN":
            self.w1s = nn.ParameterList(_square(d, generator) for _ in range(L))
            self.w2s = nn.ParameterList(_square(d, generator) for _ in range(L))
        else:
            self.w1s = self.w2s = None
        if v == "JdSNN_W0":
            self.sheaf_init = Mlp(MlpSpec((2 * d * c, d * d), (config.sheaf_act,)), generator)
        else:
            self.sheaf_init = None
        if config.use_W1_W2:
            self.w1 = nn.ParameterList(_square(d, generator) for _ in range(L))
            self.w2 = nn.ParameterList(_square(c, generator) for _ in range(L))
        else:
            self.w1 = self.w2 = None

    def initial_stack(self, x, data):
        if self.sheaf_init is not None:
            maps = mlp_restriction_maps(x, data.src, data.dst, self.sheaf_init, "general")
            return maps.transpose(-1, -2)
        return identity_maps(data.m, self.config.d)

    def propagate(self, x, data, norm_cache):
        cfg = self.config
        fstar = self.initial_stack(x, data)
        history = [fstar]
        mode = "euler" if cfg.variant == "JdSNN_W0" else "full"
        for t in range(cfg.layers):
            dis = self._dis(t, fstar.transpose(-1, -2), data, norm_cache)
            w1 = self.w1[t] if self.w1 is not None else None
            w2 = self.w2[t] if self.w2 is not None else None
            w1s = self.w1s[t] if self.w1s is not None else None
            w2s = self.w2s[t] if self.w2s is not None else None
            # the parameter-free variant drops the nonlinearity on the dual update
            sigma_f = cfg.sigma if cfg.variant == "JdSNN" else "identity"
            x, fstar = jdsnn_layer(x, fstar, data.src, data.dst, cfg.alpha, cfg.beta, w1, w2, w1s, w2s,
                                   cfg.sigma, sigma_f, dis, mode)
            history.append(fstar)
        return x, {"fstar": history}


def build_model(config: ModelConfig, in_features: int, n_classes: int, seed: int = 0) -> nn.Module:
    """Instantiate the variant with parameters drawn from a private generator."""
    gen = torch.Generator().manual_seed(int(seed))
    v = config.variant
    if v == "MLPBaseline":
        return MLPBaseline(config, in_features, n_classes, gen)
    if v == "GCN":
        return GCN(config, in_features, n_classes, gen)
    if v in JOINT_VARIANTS:
        return JointSheafNet(config, in_features, n_classes, gen)
    return SheafNet(config, in_features, n_classes, gen)


@dataclass(frozen=True)
class ParamCount:
    sheaf: int
    diffusion: int
    io: int
    sheaf_per_layer: Optional[int]

    @property
    def total(self) -> int:
        return self.sheaf + self.diffusion + self.io

    def as_dict(self):
        return {"sheaf": self.sheaf, "diffusion": self.diffusion, "io": self.io, "total": self.total,
                "sheaf_per_layer": self.sheaf_per_layer}


def param_count(config: ModelConfig, in_features: int = 3, n_classes: int = 2) -> ParamCount:
    """Closed-form count of learnable scalars, grouped like :meth:`NodeClassifier.param_groups`."""
    d, c, L, v = config.d, config.c, config.layers, config.variant
    dec = (d * c * n_classes + n_classes) if config.train_decoder else 0
    if v == "MLPBaseline":
        io = (in_features * n_classes + n_classes) if config.train_decoder else 0
        return ParamCount(0, 0, io, None)
    io = dec + ((in_features * d * c + d * c) if config.encoder else 0)
    if v == "GCN":
        return ParamCount(0, L * (d * c) ** 2, io, None)
    diffusion = L * (d * d + c * c) if config.use_W1_W2 else 0
    per_layer = {
        "SNN": 2 * d * c * d * d + d * d,
        "DiagSNN": 2 * d * c * d + d,
        "RiSNN": d ** 4,
        "RiSNN_NoT": d ** 4,
        "JdSNN": 2 * d * d,
        "JdSNN_NoW": 0,
        "JdSNN_W0": 0,
        "VanillaSheaf": 0,
    }[v]
    sheaf = L * per_layer
    if v == "JdSNN_W0":
        sheaf += 2 * d * c * d * d + d * d
    return ParamCount(sheaf, diffusion, io, per_layer)


def counted_parameters(model: nn.Module) -> dict:
    named = dict(model.named_parameters())
    return {g: sum(named[n].numel() for n in names) for g, names in model.param_groups().items()}
