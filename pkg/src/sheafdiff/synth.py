"""Synthetic node-classification datasets with controllable heterophily.

Features lie on the surfaces of origin-centred ellipsoids (one per class), so
every class has zero mean and no affine classifier separates them.  Edges
come from a ring lattice whose rightmost edges are rewired towards classes
drawn from an inter-class correlation matrix.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import ClassLabels, Graph, ring_lattice

__all__ = [
    "GENERATOR_VERSION",
    "RNG_ALGORITHM",
    "DatasetSpec",
    "Dataset",
    "Rewire",
    "class_correlation_matrix",
    "default_semi_axes",
    "sample_labels",
    "sample_ellipsoid_features",
    "rewire_ring",
    "generate_edges",
    "add_feature_noise",
    "make_splits",
    "make_streams",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "DatasetFormatError",
]

GENERATOR_VERSION = "sheafdiff-synth/1"
RNG_ALGORITHM = "numpy.Philox(4x64-10)/SeedSequence.spawn"
STREAMS = ("labels", "features", "edges", "noise", "splits")
MAGIC = b"SHEAFDS\x01"
CLASS_RESAMPLES = 20
_REJECTION_TRIES = 32


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    N: int = 2000
    K: int = 4
    p: float = 1.0
    n_c: int = 2
    het: float = 0.3
    f: int = 3
    noise_rho: float = 0.0
    class_specs: Optional[tuple] = None
    split_fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.class_specs is not None:
            object.__setattr__(self, "class_specs",
                               tuple(tuple(float(a) for a in axes) for axes in self.class_specs))
        object.__setattr__(self, "split_fractions", tuple(float(x) for x in self.split_fractions))
        self.validate()

    def validate(self):
        if self.N < 3:
            raise ValueError("N: need at least 3 nodes")
        if self.K <= 0 or self.K % 2 or self.N - 1 - self.K // 2 <= self.K // 2:
            raise ValueError(f"K: must be even with N-1-K/2 > K/2 (N={self.N}, K={self.K})")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p: rewiring probability must lie in [0, 1], got {self.p}")
        if self.n_c < 2:
            raise ValueError(f"n_c: need at least 2 classes, got {self.n_c}")
        if not 0.0 <= self.het <= 1.0:
            raise ValueError(f"het: heterophily coefficient must lie in [0, 1], got {self.het}")
        if self.f < 1:
            raise ValueError("f: feature dimension must be positive")
        if not 0.0 <= self.noise_rho <= 1.0:
            raise ValueError(f"noise_rho: must lie in [0, 1], got {self.noise_rho}")
        fr = self.split_fractions
        if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split_fractions: need three positive fractions summing to 1, got {fr}")
        if self.class_specs is not None:
            if len(self.class_specs) != self.n_c:
                raise ValueError("class_specs: need one semi-axis vector per class")
            for axes in self.class_specs:
                if len(axes) != self.f or min(axes) <= 0:
                    raise ValueError("class_specs: semi-axes must be positive, one per feature")
            if len(set(self.class_specs)) != self.n_c:
                raise ValueError("class_specs: classes must have distinct semi-axes")

    def semi_axes(self) -> np.ndarray:
        if self.class_specs is not None:
            return np.array(self.class_specs, dtype=np.float64)
        return default_semi_axes(self.n_c, self.f)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["split_fractions"] = list(self.split_fractions)
        out["class_specs"] = None if self.class_specs is None else [list(a) for a in self.class_specs]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        data = dict(data)
        if data.get("class_specs") is not None:
            data["class_specs"] = tuple(tuple(a) for a in data["class_specs"])
        if "split_fractions" in data:
            data["split_fractions"] = tuple(data["split_fractions"])
        return cls(**data)


@dataclass(eq=False)
class Dataset:
    graph: Graph
    labels: ClassLabels
    features: np.ndarray
    splits: dict
    spec: DatasetSpec
    version: str = GENERATOR_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graph.n

    def mask(self, name: str) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        out[self.splits[name]] = True
        return out


@dataclass(frozen=True)
class Rewire:
    node: int
    old: int
    new: int
    target_class: int
    inter_class: bool


def class_correlation_matrix(n_c: int, het: float) -> np.ndarray:
    """``1 - het`` on the diagonal, ``het / (n_c - 1)`` elsewhere."""
    if n_c < 2:
        raise ValueError("need at least two classes")
    if not 0.0 <= het <= 1.0:
        raise ValueError(f"het must lie in [0, 1], got {het}")
    rc = np.full((n_c, n_c), het / (n_c - 1))
    np.fill_diagonal(rc, 1.0 - het)
    return rc


def default_semi_axes(n_c: int, f: int) -> np.ndarray:
    """Class ``k``: the vector ``(2, 1, ..., 1)`` cyclically shifted by ``k``.

    When there are more classes than features the peak grows by one every
    ``f`` classes so that all classes stay distinct.
    """
    axes = np.ones((n_c, f))
    for k in range(n_c):
        axes[k, k % f] = 2.0 + k // f
    return axes


def make_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(STREAMS, children)}


def sample_labels(N: int, n_c: int, rng: np.random.Generator) -> ClassLabels:
    return ClassLabels(rng.integers(0, n_c, size=N), n_c)


def sample_ellipsoid_features(labels: ClassLabels, semi_axes, rng: np.random.Generator) -> np.ndarray:
    """Project Gaussian draws onto the unit sphere, then stretch by the class semi-axes.

    The result is not uniform in surface area but is symmetric about the
    origin, so each class has zero mean.
    """
    axes = np.asarray(semi_axes, dtype=np.float64)
    lab = labels.labels
    if axes.ndim != 2 or axes.shape[0] < labels.n_c:
        raise ValueError("need one semi-axis vector per class")
    if np.any(axes <= 0):
        raise ValueError("semi-axes must be positive")
    n, f = len(lab), axes.shape[1]
    g = rng.standard_normal((n, f))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        g[bad] = rng.standard_normal((int(bad.sum()), f))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None] * axes[lab]


def rewire_ring(spec: DatasetSpec, labels: ClassLabels, rng: np.random.Generator):
    """Ring lattice plus heterophily-aware rewiring; returns ``(graph, rewires)``.

    For each node ``i`` in index order and each of its ``K/2`` rightmost ring
    edges, with probability ``p`` a target class is drawn from row
    ``labels[i]`` of the correlation matrix and the edge is moved to a
    uniformly chosen node of that class that is neither ``i`` nor already a
    neighbour.  If the class has no candidate the class is redrawn up to 20
    times; after that the original edge is kept.
    """
    N, K = spec.N, spec.K
    lab = labels.labels
    rc = class_correlation_matrix(spec.n_c, spec.het)
    members = [np.flatnonzero(lab == k) for k in range(spec.n_c)]
    base = ring_lattice(N, K)
    adj = [set(a.tolist()) for a in base.adjacency]
    log: list[Rewire] = []
    for i in range(N):
        for k in range(1, K // 2 + 1):
            j = (i + k) % N
            if rng.random() >= spec.p:
                continue
            new = None
            for _ in range(CLASS_RESAMPLES):
                cls = int(rng.choice(spec.n_c, p=rc[lab[i]]))
                new = _pick_candidate(members[cls], adj[i], i, rng)
                if new is not None:
                    break
            if new is None:
                continue
            adj[i].discard(j)
            adj[j].discard(i)
            adj[i].add(new)
            adj[new].add(i)
            log.append(Rewire(i, j, new, cls, bool(cls != lab[i])))
    edges = [(u, v) for u in range(N) for v in adj[u] if u < v]
    return Graph.from_edges(N, edges), log


def _pick_candidate(pool: np.ndarray, nbrs: set, i: int, rng: np.random.Generator):
    if len(pool) == 0:
        return None
    for _ in range(_REJECTION_TRIES):
        v = int(pool[rng.integers(len(pool))])
        if v != i and v not in nbrs:
            return v
    cand = [v for v in pool.tolist() if v != i and v not in nbrs]
    if not cand:
        return None
    return int(cand[rng.integers(len(cand))])


def generate_edges(spec: DatasetSpec, labels: ClassLabels, rng: np.random.Generator) -> Graph:
    return rewire_ring(spec, labels, rng)[0]


def add_feature_noise(features: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Convex mix ``(1 - rho) x + rho z``.

    ``z`` is Gaussian with the per-column standard deviation of the clean
    features, so ``rho`` is the fraction of the signal that is noise.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    x = np.asarray(features, dtype=np.float64)
    if rho == 0.0:
        return x.copy()
    z = rng.standard_normal(x.shape) * x.std(axis=0)
    return (1.0 - rho) * x + rho * z


def make_splits(N: int, fractions: Sequence[float], rng: np.random.Generator) -> dict:
    fr = [float(x) for x in fractions]
    if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError("need three positive fractions summing to 1")
    n_train = int(round(N * fr[0]))
    n_val = int(round(N * fr[1]))
    n_test = N - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"split sizes {(n_train, n_val, n_test)} leave a split empty")
    perm = rng.permutation(N)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Full pipeline; a pure function of ``spec`` (including its seed)."""
    rng = make_streams(spec.seed)
    labels = sample_labels(spec.N, spec.n_c, rng["labels"])
    clean = sample_ellipsoid_features(labels, spec.semi_axes(), rng["features"])
    graph, log = rewire_ring(spec, labels, rng["edges"])
    feats = add_feature_noise(clean, spec.noise_rho, rng["noise"])
    splits = make_splits(spec.N, spec.split_fractions, rng["splits"])
    extra = {"rewired": len(log), "rewired_inter_class": int(sum(r.inter_class for r in log))}
    return Dataset(graph, labels, feats, splits, spec, extra=extra)


# ---------------------------------------------------------------------------
# .sheafds file format
#
#   8 bytes   magic  b"SHEAFDS\x01"
#   8 bytes   little-endian uint64 header length H
#   H bytes   UTF-8 JSON header
#   rest      little-endian float64 features, row-major (n, f)
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> str:
    """Write ``ds`` to ``path``; returns the SHA-256 of the feature block."""
    feats = np.ascontiguousarray(ds.features, dtype="<f8")
    blob = feats.tobytes()
    digest = hashlib.sha256(blob).hexdigest()
    header = {
        "format": "sheafds",
        "version": ds.version,
        "rng": RNG_ALGORITHM,
        "streams": list(STREAMS),
        "spec": ds.spec.to_dict(),
        "n": int(ds.graph.n),
        "edges": ds.graph.edges.tolist(),
        "labels": ds.labels.labels.tolist(),
        "n_c": int(ds.labels.n_c),
        "splits": {k: np.asarray(v).tolist() for k, v in ds.splits.items()},
        "features": {"shape": list(feats.shape), "dtype": "<f8", "offset": 0,
                     "nbytes": len(blob), "sha256": digest},
        "extra": ds.extra,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(blob)
    return digest


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        header, _ = _read(fh, with_features=False)
    return header


def _read(fh, with_features=True):
    if fh.read(len(MAGIC)) != MAGIC:
        raise DatasetFormatError("not a .sheafds file (bad magic)")
    size = fh.read(8)
    if len(size) != 8:
        raise DatasetFormatError("truncated header length")
    (hlen,) = struct.unpack("<Q", size)
    raw = fh.read(hlen)
    if len(raw) != hlen:
        raise DatasetFormatError("truncated header")
    header = json.loads(raw)
    if header.get("version") != GENERATOR_VERSION:
        raise DatasetFormatError(f"unsupported generator version {header.get('version')!r}")
    if not with_features:
        return header, None
    meta = header["features"]
    blob = fh.read()
    if len(blob) != meta["nbytes"] or hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise DatasetFormatError("feature block checksum mismatch (file truncated or corrupted)")
    feats = np.frombuffer(blob, dtype="<f8").reshape(meta["shape"]).astype(np.float64)
    return header, feats


def load_dataset(path) -> Dataset:
    with open(Path(path), "rb") as fh:
        header, feats = _read(fh)
    graph = Graph(header["n"], np.array(header["edges"], dtype=np.int64).reshape(-1, 2))
    labels = ClassLabels(np.array(header["labels"], dtype=np.int64), header["n_c"])
    splits = {k: np.array(v, dtype=np.int64) for k, v in header["splits"].items()}
    spec = DatasetSpec.from_dict(header["spec"])
    return Dataset(graph, labels, feats, splits, spec, header["version"], header.get("extra", {}))
