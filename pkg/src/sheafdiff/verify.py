"""Property suites backing ``sheafdiff verify`` and the acceptance tests.

Each suite returns :class:`CaseResult` rows ``(suite, case, status, measured,
tolerance)``.  ``scale='full'`` runs the instance counts used for release
checks, ``'quick'`` a reduced set for interactive use.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Optional

import numpy as np

from . import dynamics as dyn
from .graph import Graph, connected_components
from .sheaf import (
    CellularSheaf,
    dirichlet_energy,
    edge_residuals,
    harmonic_projection,
    random_orthogonal_sheaf,
    random_sheaf,
    sheaf_laplacian_dense,
)

__all__ = ["CaseResult", "Report", "SUITES", "SCALES", "run_suite", "run_all", "random_connected_graph"]

PASS, FAIL = "pass", "fail"

SCALES = {
    "quick": {"oversmoothing": 10, "harmonic_limit": 10, "energy_descent": 20, "nonzero_limit": 30, "rotation": 10,
              "grad_probes": 20, "gen_seeds": 4, "gen_samples": 20000},
    "full": {"oversmoothing": 50, "harmonic_limit": 50, "energy_descent": 100, "nonzero_limit": 200, "rotation": 100,
             "grad_probes": 50, "gen_seeds": 20, "gen_samples": 100000},
}


@dataclass(frozen=True)
class CaseResult:
    suite: str
    case: str
    status: str
    measured: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS


def _case(suite, case, ok, measured, tol, detail=""):
    return CaseResult(suite, case, PASS if ok else FAIL, float(measured), float(tol), detail)


@dataclass
class Report:
    results: list
    elapsed: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self):
        return [r for r in self.results if not r.passed]

    def to_dict(self):
        suites = {}
        for r in self.results:
            s = suites.setdefault(r.suite, {"cases": 0, "failed": 0})
            s["cases"] += 1
            s["failed"] += 0 if r.passed else 1
        return {"passed": self.passed, "suites": suites, "elapsed_s": self.elapsed,
                "results": [asdict(r) for r in self.results]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def random_connected_graph(n: int, rng: np.random.Generator, extra: float = 0.15) -> Graph:
    """Random spanning tree plus independent extra edges with probability ``extra``."""
    perm = rng.permutation(n)
    edges = {tuple(sorted((int(perm[i]), int(perm[rng.integers(i)])))) for i in range(1, n)}
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < extra:
                edges.add((u, v))
    return Graph.from_edges(n, sorted(edges))


def _random_tree(n: int, rng: np.random.Generator) -> Graph:
    return random_connected_graph(n, rng, extra=0.0)


def _disjoint_union(parts) -> Graph:
    edges, off = [], 0
    for g in parts:
        edges.extend((u + off, v + off) for u, v in g.edges.tolist())
        off += g.n
    return Graph.from_edges(off, edges)


# -- oversmoothing --------------------------------------------------------------

def suite_oversmoothing(scale: str = "full", seed: int = 0):
    count = SCALES[scale]["oversmoothing"]
    rng = np.random.default_rng([seed, 1])
    out = []
    graphs = [("connected", random_connected_graph(int(rng.integers(2, 31)), rng)) for _ in range(count)]
    graphs += [("components", _disjoint_union([random_connected_graph(int(rng.integers(1, 11)), rng)
                                               for _ in range(int(rng.integers(2, 4)))]))
               for _ in range(max(2, count // 5))]
    for i, (kind, g) in enumerate(graphs):
        x0 = rng.standard_normal((g.n, int(rng.integers(1, 4))))
        max_deg = max(int(g.degrees.max()), 1)
        cfg = dyn.DiffusionConfig(step_size=0.9 / max_deg, max_steps=200000, residual_tol=1e-10,
                                  record_every=10 ** 9)
        traj = dyn.euler_graph_diffusion(g, x0, cfg)
        x = traj.final_x
        dev = 0.0
        for comp in connected_components(g):
            dev = max(dev, float(np.max(np.abs(x[comp] - x0[comp].mean(axis=0)))))
        ok = traj.converged and dev < 1e-6
        out.append(_case("oversmoothing", f"{kind}-{i}(n={g.n},m={g.m})", ok, dev, 1e-6,
                         f"steps={traj.steps} converged={traj.converged}"))
    return out


# -- sheaf diffusion limit --------------------------------------------------------

def suite_harmonic_limit(scale: str = "full", seed: int = 0):
    count = SCALES[scale]["harmonic_limit"]
    rng = np.random.default_rng([seed, 2])
    out = []
    for i in range(count):
        n = int(rng.integers(2, 11))
        d = int(rng.integers(1, 4))
        g = _random_tree(n, rng) if i % 2 == 0 else random_connected_graph(n, rng, extra=0.25)
        s = random_orthogonal_sheaf(g, d, rng)
        x0 = rng.standard_normal((n * d, int(rng.integers(1, 3))))
        lam = np.linalg.eigvalsh(sheaf_laplacian_dense(s))[-1]
        cfg = dyn.DiffusionConfig(step_size=1.0 / lam, max_steps=500000, residual_tol=1e-11,
                                  record_every=10 ** 9)
        traj = dyn.euler_sheaf_diffusion(s, x0, cfg)
        target = harmonic_projection(s, x0)
        err = float(np.linalg.norm(traj.final_x - target) / np.linalg.norm(x0))
        h0 = int(np.linalg.matrix_rank(target, tol=1e-8)) if target.size else 0
        out.append(_case("harmonic_limit", f"sheaf-{i}(n={n},d={d},m={g.m})", traj.converged and err < 1e-5, err, 1e-5,
                         f"steps={traj.steps} rank(P x0)={h0}"))
    return out


# -- energy descent ---------------------------------------------------------------

def joint_step_size(s: CellularSheaf, x, alpha: float, beta: float, safety: float = 0.5) -> float:
    """Step below the stability limits of both linearised right-hand sides."""
    lam = np.linalg.eigvalsh(sheaf_laplacian_dense(s))[-1] if s.m else 0.0
    xb = np.asarray(x).reshape(s.n, s.d, -1)
    sq = np.sum(xb ** 2, axis=(1, 2))
    lam_x = float(np.max(sq[s.graph.src] + sq[s.graph.dst])) if s.m else 0.0
    return safety / max(alpha * lam + beta * lam_x, 1e-12)


def _random_joint_instance(rng, c_max=3):
    n = int(rng.integers(2, 8))
    d = int(rng.integers(1, 4))
    c = int(rng.integers(1, c_max + 1))
    g = random_connected_graph(n, rng, extra=0.3)
    s = random_sheaf(g, d, rng)
    x0 = rng.standard_normal((n * d, c))
    alpha, beta = (float(v) for v in rng.uniform(0.5, 2.0, size=2))
    return s, x0, alpha, beta


DESCENT_CHUNK, DESCENT_MAX_STEPS = 20_000, 200_000


def suite_energy_descent(scale: str = "full", seed: int = 0):
    count = SCALES[scale]["energy_descent"]
    rng = np.random.default_rng([seed, 3])
    out = []
    for i in range(count):
        s, x0, alpha, beta = _random_joint_instance(rng)
        cfg = dyn.DiffusionConfig(step_size=joint_step_size(s, x0, alpha, beta), max_steps=DESCENT_CHUNK,
                                  residual_tol=1e-7, alpha=alpha, beta=beta)
        name = f"joint-{i}(n={s.n},d={s.d},c={x0.shape[1]})"
        # unconverged runs resume from their end state (the flow is memoryless) so that
        # the zero-iff check sees the limit rather than a state still in transit
        energies, steps, sh, x = [], 0, s, x0
        h0, base_halvings = cfg.step_size, cfg.max_halvings
        psi0 = dirichlet_energy(s, x0)
        try:
            while True:
                traj = dyn.euler_joint_diffusion(sh, x, cfg)
                energies.extend(traj.energies if not energies else traj.energies[1:])
                steps += traj.steps
                if traj.converged or steps >= DESCENT_MAX_STEPS:
                    break
                sh, x = traj.final_sheaf, traj.final_x
                # keep the rejection threshold and the halving budget those of one run
                used = int(round(np.log2(h0 / traj.step_size)))
                cfg = replace(cfg, step_size=traj.step_size, max_halvings=max(base_halvings - used, 0),
                              energy_rtol=1e-10 * psi0 / max(energies[-1], 1e-300))
        except dyn.DivergenceError as exc:
            rel = exc.increase / psi0 if psi0 > 0 else exc.increase
            out.append(_case("energy_descent", name + ":descent", False, rel, 1e-10,
                             f"energy increase {exc.increase:.3e} at step {steps + exc.step}"))
            continue
        e = np.asarray(energies)
        rise = float(np.max(np.diff(e))) if len(e) > 1 else 0.0
        rel_rise = rise / psi0 if psi0 > 0 else 0.0
        ok = rel_rise <= 1e-10 and e.min() >= 0
        out.append(_case("energy_descent", name + ":descent", ok, rel_rise, 1e-10, f"steps={steps}"))
        fin = traj.final_state
        res = float(edge_residuals(traj.final_sheaf, fin.x).max()) if s.m else 0.0
        agree = (fin.energy < 1e-8) == (res < 1e-4)
        out.append(_case("energy_descent", name + ":zero-iff", agree, fin.energy, 1e-8,
                         f"max_residual={res:.3e} converged={traj.converged} steps={steps}"))
    return out


# -- non-zero limits --------------------------------------------------------------

def p2_instance():
    g = Graph.from_edges(2, [(0, 1)])
    s = CellularSheaf(g, 1, np.array([[[[1.0]], [[1.0]]]]))
    return s, np.array([2.0, 0.0])


def suite_nonzero_limit(scale: str = "full", seed: int = 0):
    count = SCALES[scale]["nonzero_limit"]
    rng = np.random.default_rng([seed, 4])
    out = []
    s, x0 = p2_instance()
    k = dyn.find_scaling_k(s, x0, 1.0, 0.01)
    out.append(_case("nonzero_limit", "p2-scaling-k", k == 8.0, k, 0.0, "expected k=8"))
    for i in range(count):
        sh, x, alpha, beta = _random_joint_instance(rng, c_max=1)
        x = x[:, 0] * 10.0 ** rng.uniform(-2, 0)
        try:
            k = dyn.find_scaling_k(sh, x, alpha, beta)
        except RuntimeError as exc:
            out.append(_case("nonzero_limit", f"cert-{i}:k", False, float("inf"), dyn.MAX_DOUBLINGS, str(exc)))
            continue
        doublings = int(round(np.log2(k)))
        xk = k * x
        cert = dyn.nonzero_certificate(sh, xk, alpha, beta)
        cfg = dyn.DiffusionConfig(step_size=joint_step_size(sh, xk, alpha, beta), max_steps=100000,
                                  alpha=alpha, beta=beta, record_every=10 ** 9)
        name = f"cert-{i}(n={sh.n},d={sh.d},k={k:g})"
        out.append(_case("nonzero_limit", name + ":k", bool(cert) and doublings <= dyn.MAX_DOUBLINGS,
                         doublings, dyn.MAX_DOUBLINGS, f"witness={cert.node}"))
        try:
            traj = dyn.euler_joint_diffusion(sh, xk, cfg)
        except dyn.DivergenceError as exc:
            out.append(_case("nonzero_limit", name + ":limit", False, 0.0, 1e-4, str(exc)))
            continue
        norm0 = np.linalg.norm(xk)
        ratio = float(np.linalg.norm(traj.final_x) / norm0)
        lb = limit_lower_bound(traj.final_sheaf, traj.final_x, alpha, beta) / norm0
        ok = ratio > 1e-4 and (traj.converged or lb > 1e-4)
        out.append(_case("nonzero_limit", name + ":limit", ok, ratio, 1e-4,
                         f"steps={traj.steps} converged={traj.converged} invariant_bound={lb:.3e}"))
    return out


def limit_lower_bound(s: CellularSheaf, x, alpha: float, beta: float) -> float:
    """Lower bound on the norm of the joint-diffusion limit started from ``(x, s)``.

    ``beta x_u x_u^T - alpha sum_e F_u^T F_u`` is conserved along the flow, so
    a negative eigenvalue ``-mu`` of a certificate block keeps
    ``beta ||x_u||^2 >= mu`` for all time.
    """
    blocks = dyn.certificate_blocks(s, x, alpha, beta)
    mu = -float(np.linalg.eigvalsh(blocks)[:, 0].min()) if len(blocks) else 0.0
    return float(np.sqrt(mu / beta)) if mu > 0 else 0.0


# -- rotation invariance ------------------------------------------------------------

def random_orthogonal(c: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((c, c)))
    return q * np.sign(np.diag(r))


def suite_rotation(scale: str = "full", seed: int = 0):
    import torch

    from .nn import GraphData, build_model, preset

    count = SCALES[scale]["rotation"]
    rng = np.random.default_rng([seed, 5])
    g = random_connected_graph(12, rng, extra=0.3)
    d, c = 3, 5
    x = torch.as_tensor(rng.standard_normal((g.n, d, c)))
    data = GraphData.from_arrays(np.zeros((g.n, 1)), g.edges, np.zeros(g.n, dtype=int), 2)
    out = []
    for variant in ("RiSNN", "RiSNN_NoT"):
        for depth in (1, 2, 3):
            model = build_model(preset(variant, layers=depth), 1, 2, seed=seed)
            with torch.no_grad():
                _, ref = model.propagate(x, data, None)
                worst = 0.0
                for _ in range(count):
                    q = torch.as_tensor(random_orthogonal(c, rng))
                    _, rot = model.propagate(x @ q, data, None)
                    for a, b in zip(ref["maps"], rot["maps"]):
                        worst = max(worst, float((a - b).abs().max()))
            out.append(_case("rotation", f"{variant}-depth{depth}", worst < 1e-8, worst, 1e-8,
                             f"{count} rotations"))
    return out


# -- gradient exactness -------------------------------------------------------------

def gradient_configs():
    from .nn import VARIANTS, preset

    configs = [preset(v) for v in VARIANTS]
    configs += [preset(v, use_W1_W2=True, sigma="tanh") for v in
                ("SNN", "DiagSNN", "VanillaSheaf", "JdSNN", "JdSNN_NoW", "JdSNN_W0", "RiSNN", "RiSNN_NoT")]
    configs += [preset("GCN", sigma="tanh"), preset("SNN", normalization="none")]
    return configs


def suite_gradients(scale: str = "full", seed: int = 0):
    from .nn import GraphData, build_model, finite_difference_check
    from .synth import DatasetSpec, generate_dataset

    probes = SCALES[scale]["grad_probes"]
    ds = generate_dataset(DatasetSpec(N=40, K=4, p=0.5, het=0.3, n_c=3, f=3, seed=seed))
    data = GraphData.from_dataset(ds)
    out = []
    for cfg in gradient_configs():
        model = build_model(cfg, data.x.shape[1], data.n_classes, seed=seed)
        rows = finite_difference_check(model, data, data.masks["train"], probes=probes, seed=seed)
        worst = max((r[4] for r in rows), default=0.0)
        tag = f"{cfg.variant}(W={cfg.use_W1_W2},sigma={cfg.sigma},norm={cfg.normalization})"
        out.append(_case("gradients", tag, worst < 1e-4, worst, 1e-4, f"{len(rows)} probes"))
    return out


# -- generator statistics -------------------------------------------------------------

def suite_generator(scale: str = "full", seed: int = 0):
    from .graph import ClassLabels
    from .synth import (DatasetSpec, class_correlation_matrix, default_semi_axes, make_streams,
                        rewire_ring, sample_ellipsoid_features, sample_labels)

    sc = SCALES[scale]
    out = []
    worst = 0.0
    for n_c in (2, 3, 5):
        for het in (0.0, 0.2, 0.3, 0.5, 0.8, 1.0):
            rc = class_correlation_matrix(n_c, het)
            worst = max(worst, float(np.max(np.abs(rc.sum(axis=1) - 1))))
            if rc.min() < 0:
                worst = max(worst, 1.0)
    out.append(_case("generator", "Rc-row-sums", worst < 1e-12, worst, 1e-12))
    for het in (0.3, 0.8):
        for s in range(sc["gen_seeds"]):
            spec = DatasetSpec(N=2000, K=4, p=1.0, het=het, n_c=2, seed=seed * 1000 + s)
            rng = make_streams(spec.seed)
            labels = sample_labels(spec.N, spec.n_c, rng["labels"])
            g, log = rewire_ring(spec, labels, rng["edges"])
            n = len(log)
            frac = sum(r.inter_class for r in log) / n
            sigma = np.sqrt(het * (1 - het) / n)
            z = abs(frac - het) / sigma if sigma > 0 else (0.0 if frac == het else np.inf)
            out.append(_case("generator", f"inter-class(het={het},seed={spec.seed})", z <= 3.0, z, 3.0,
                             f"fraction={frac:.4f} rewired={n}"))
            out.append(_case("generator", f"edge-count(het={het},seed={spec.seed})", g.m == spec.N * spec.K // 2,
                             g.m, spec.N * spec.K // 2))
    rng = np.random.default_rng([seed, 7])
    for n_c, f in ((2, 3), (3, 3), (5, 4)):
        axes = default_semi_axes(n_c, f)
        lab = ClassLabels(rng.integers(n_c, size=sc["gen_samples"]), n_c)
        x = sample_ellipsoid_features(lab, axes, rng)
        resid = float(np.max(np.abs(np.sum((x / axes[lab.labels]) ** 2, axis=1) - 1)))
        out.append(_case("generator", f"surface-identity(n_c={n_c},f={f})", resid < 1e-10, resid, 1e-10))
        ratio = max(float(np.linalg.norm(x[lab.labels == k].mean(axis=0)) / axes[k].max()) for k in range(n_c))
        out.append(_case("generator", f"class-mean(n_c={n_c},f={f})", ratio < 0.02, ratio, 0.02))
    return out


SUITES: dict[str, Callable] = {
    "oversmoothing": suite_oversmoothing,
    "harmonic_limit": suite_harmonic_limit,
    "energy_descent": suite_energy_descent,
    "nonzero_limit": suite_nonzero_limit,
    "rotation": suite_rotation,
    "gradients": suite_gradients,
    "generator": suite_generator,
}


def run_suite(name: str, scale: str = "full", seed: int = 0):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    if scale not in SCALES:
        raise KeyError(f"unknown scale {scale!r}")
    return SUITES[name](scale, seed)


def run_all(names: Optional[Iterable[str]] = None, scale: str = "full", seed: int = 0) -> Report:
    results, elapsed = [], {}
    for name in (names or SUITES):
        t0 = time.perf_counter()
        results.extend(run_suite(name, scale, seed))
        elapsed[name] = round(time.perf_counter() - t0, 3)
    return Report(results, elapsed)
