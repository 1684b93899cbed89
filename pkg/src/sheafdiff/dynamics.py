"""Explicit-Euler integrators for graph, sheaf, dual and joint diffusion.

The joint system evolves node features ``X`` and the transposed restriction
maps ``F*`` together::

    dF*/dt = -beta  * Delta_X F*
    dX/dt  = -alpha * Delta_F X

which is a scaled gradient flow of the sheaf Dirichlet energy
``Psi = ||delta X||^2``.  Convergence is declared when the max-norm of the
per-step update divided by the step size drops below ``residual_tol``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .graph import Graph, graph_laplacian
from .sheaf import (
    DENSE_GUARD,
    CellularSheaf,
    degree_blocks,
    dirichlet_energy,
    dual_laplacian_apply,
    edge_residuals,
    node_blocks,
    sheaf_from_stack,
    sheaf_laplacian_apply,
    sheaf_laplacian_sparse,
    to_restriction_stack,
)

__all__ = [
    "DiffusionConfig",
    "Snapshot",
    "Trajectory",
    "DivergenceError",
    "UnstableStepError",
    "euler_graph_diffusion",
    "euler_sheaf_diffusion",
    "euler_dual_diffusion",
    "euler_joint_diffusion",
    "Certificate",
    "certificate_blocks",
    "nonzero_certificate",
    "find_scaling_k",
]

CERT_EIG_TOL = 1e-10
MAX_DOUBLINGS = 60


class UnstableStepError(ValueError):
    """Step size exceeds the explicit-Euler stability bound."""


class DivergenceError(RuntimeError):
    """The Dirichlet energy increased even after the allowed number of step halvings."""

    def __init__(self, msg, step=None, energy_before=None, energy_after=None):
        super().__init__(msg)
        self.step = step
        self.energy_before = energy_before
        self.energy_after = energy_after

    @property
    def increase(self):
        if self.energy_before is None:
            return None
        return self.energy_after - self.energy_before


@dataclass(frozen=True)
class DiffusionConfig:
    step_size: float = 0.1
    max_steps: int = 100_000
    residual_tol: float = 1e-7
    alpha: float = 1.0
    beta: float = 1.0
    record_every: int = 1
    # joint diffusion only
    energy_rtol: float = 1e-10
    max_halvings: int = 10
    alternating: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.max_steps < 0 or self.record_every < 1:
            raise ValueError("max_steps must be >= 0 and record_every >= 1")


@dataclass
class Snapshot:
    step: int
    x: np.ndarray
    f: Optional[np.ndarray]
    energy: float
    residual: float

    @property
    def signal_norm(self) -> float:
        return float(np.linalg.norm(self.x))


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    converged: bool = False
    steps: int = 0
    step_size: float = 0.0
    graph: Optional[Graph] = None

    def record(self, snap: Snapshot):
        self.states.append(snap)
        self.energies.append(snap.energy)

    @property
    def final_state(self) -> Snapshot:
        return self.states[-1]

    @property
    def final_x(self) -> np.ndarray:
        return self.final_state.x

    @property
    def final_f(self) -> Optional[np.ndarray]:
        return self.final_state.f

    @property
    def final_sheaf(self) -> Optional[CellularSheaf]:
        if self.final_f is None or self.graph is None:
            return None
        return sheaf_from_stack(self.graph, self.final_f)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "energy", "residual", "signal_norm"])
            for s in self.states:
                w.writerow([s.step, repr(s.energy), repr(s.residual), repr(s.signal_norm)])


def _as_signal(x0, rows: int) -> np.ndarray:
    x = np.array(x0, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != rows:
        raise ValueError(f"signal must have {rows} rows, got shape {x.shape}")
    return x


def _linear_diffusion(apply, energy, x, cfg: DiffusionConfig, traj: Trajectory, f_out=None):
    h = cfg.step_size
    step = 0
    while True:
        dx = apply(x)
        res = float(np.max(np.abs(dx))) if dx.size else 0.0
        done = res < cfg.residual_tol
        if done or step == cfg.max_steps or step % cfg.record_every == 0:
            traj.record(Snapshot(step, x.copy(), f_out, energy(x), res))
        if done:
            traj.converged = True
            break
        if step == cfg.max_steps:
            break
        x = x - h * dx
        step += 1
    traj.steps = step
    traj.step_size = h
    return traj


def euler_graph_diffusion(g: Graph, x0, cfg: DiffusionConfig = DiffusionConfig()) -> Trajectory:
    """Integrate ``dX/dt = -L X`` with the combinatorial Laplacian.

    The step must satisfy ``step * 2 * max_degree < 2``; ``2 * max_degree``
    bounds the top eigenvalue of ``L`` by Gershgorin.
    """
    x = _as_signal(x0, g.n)
    max_deg = int(g.degrees.max()) if g.n and g.m else 0
    if cfg.step_size * 2 * max_deg >= 2:
        raise UnstableStepError(
            f"step {cfg.step_size} too large: Gershgorin bound requires step < {1 / max_deg:.6g}")
    lap = graph_laplacian(g)
    apply = lambda x: lap @ x  # noqa: E731
    energy = lambda x: float(np.sum(x * (lap @ x)))  # noqa: E731
    return _linear_diffusion(apply, energy, x, cfg, Trajectory(graph=g))


def euler_sheaf_diffusion(s: CellularSheaf, x0, cfg: DiffusionConfig = DiffusionConfig()) -> Trajectory:
    """Integrate ``dX/dt = -Delta_F X`` for a fixed sheaf."""
    x = _as_signal(x0, s.n * s.d)
    lap = sheaf_laplacian_sparse(s)
    size = s.n * s.d
    if size and s.m:
        if size <= DENSE_GUARD:
            lam = float(np.linalg.eigvalsh(lap.toarray())[-1])
        elif size > 2:
            lam = float(spla.eigsh(lap, k=1, which="LA", return_eigenvectors=False)[0])
        else:
            lam = 0.0
        if lam > 0 and cfg.step_size * lam >= 2:
            raise UnstableStepError(
                f"step {cfg.step_size} too large for lambda_max={lam:.6g} (need step < {2 / lam:.6g})")
    apply = lambda x: lap @ x  # noqa: E731
    energy = lambda x: dirichlet_energy(s, x)  # noqa: E731
    return _linear_diffusion(apply, energy, x, cfg, Trajectory(graph=s.graph), to_restriction_stack(s))


def euler_dual_diffusion(g: Graph, x, f0, cfg: DiffusionConfig = DiffusionConfig()) -> Trajectory:
    """Integrate ``dF*/dt = -Delta_X F*`` with the node features held fixed.

    The stopping rule bounds the entries of ``Delta_X F*`` by ``residual_tol``.
    On edge ``e`` those entries are ``[x_u; -x_v] r_e`` where ``r_e`` is the
    transposed edge disagreement, so at convergence
    ``||F_u x_u - F_v x_v||_F <= sqrt(2) * d * residual_tol / s_min(e)`` with
    ``s_min(e)`` the smallest singular value of the stacked ``[x_u; x_v]``.
    """
    f = np.array(f0, dtype=np.float64)
    d = f.shape[1]
    x = _as_signal(x, g.n * d)

    def energy(stack):
        return dirichlet_energy(sheaf_from_stack(g, stack), x)

    h = cfg.step_size
    traj = Trajectory(graph=g)
    step = 0
    while True:
        df = dual_laplacian_apply(g, x, f)
        res = float(np.max(np.abs(df))) if df.size else 0.0
        done = res < cfg.residual_tol
        if done or step == cfg.max_steps or step % cfg.record_every == 0:
            traj.record(Snapshot(step, x, f.copy(), energy(f), res))
        if done:
            traj.converged = True
            break
        if step == cfg.max_steps:
            break
        f = f - h * df
        step += 1
    traj.steps = step
    traj.step_size = h
    return traj


def dual_residual_bound(g: Graph, x, d: int, residual_tol: float) -> np.ndarray:
    """Per-edge bound on ``||F_u x_u - F_v x_v||`` implied by a converged dual run."""
    xb = node_blocks(x, g.n, d)
    stacked = np.concatenate([xb[g.src], xb[g.dst]], axis=1)
    smin = np.linalg.svd(stacked, compute_uv=False)[:, -1]
    with np.errstate(divide="ignore"):
        return np.sqrt(2.0) * d * residual_tol / smin


def _joint_rhs(s: CellularSheaf, x: np.ndarray, f: np.ndarray, cfg: DiffusionConfig):
    """Reference right-hand sides built from the public operators."""
    dx = cfg.alpha * sheaf_laplacian_apply(s, x)
    df = cfg.beta * dual_laplacian_apply(s.graph, x, f)
    return dx, df


class _JointKernel:
    """Fused per-step arithmetic for the joint flow on ``(m, 2, d, d)`` maps.

    With ``x_e = F_u x_u - F_v x_v`` the three quantities a step needs are
    ``Psi = ||x_e||^2``, ``(Delta_F X)_u = sum F_u^T x_e`` and the map
    update ``F_u <- F_u - h beta x_e x_u^T`` (``-x_e x_v^T`` on the other
    side), which is the transpose of ``Delta_X F*``.
    """

    def __init__(self, g: Graph, d: int):
        self.g, self.d = g, d
        self.src, self.dst = g.src, g.dst
        self.inc_src, self.inc_dst = g.incidence

    def edge_diff(self, maps, xb):
        return maps[:, 0] @ xb[self.src] - maps[:, 1] @ xb[self.dst]

    def laplacian(self, maps, xe, shape):
        ft = np.swapaxes(maps, -1, -2)
        a = (ft[:, 0] @ xe).reshape(len(xe), -1)
        b = (ft[:, 1] @ xe).reshape(len(xe), -1)
        return np.asarray(self.inc_src @ a - self.inc_dst @ b).reshape(shape)

    def map_grad(self, xb, xe):
        gu = xe @ np.swapaxes(xb[self.src], -1, -2)
        gv = -(xe @ np.swapaxes(xb[self.dst], -1, -2))
        return np.stack([gu, gv], axis=1)


def _stack(maps: np.ndarray) -> np.ndarray:
    m, _, d, _ = maps.shape
    return np.swapaxes(maps, -1, -2).reshape(2 * m * d, d).copy()


def euler_joint_diffusion(s0: CellularSheaf, x0, cfg: DiffusionConfig = DiffusionConfig()) -> Trajectory:
    """Joint opinion-expression diffusion of ``X`` and ``F*``.

    Both right-hand sides are evaluated at the step-t state (Jacobi update);
    ``cfg.alternating`` switches to updating ``F*`` first and then ``X`` with
    the new maps.  A step is rejected when it raises ``Psi`` by more than
    ``energy_rtol * Psi(0)``; the step size is then halved, at most
    ``max_halvings`` times before :class:`DivergenceError` is raised.
    """
    g, d = s0.graph, s0.d
    x = _as_signal(x0, s0.n * d)
    c = x.shape[1]
    xb = x.reshape(g.n, d, c).copy()
    maps = np.array(s0.maps)
    kern = _JointKernel(g, d)
    xe = kern.edge_diff(maps, xb)
    psi = float(np.sum(xe * xe))
    psi0 = psi
    h = cfg.step_size
    halvings = 0
    traj = Trajectory(graph=g)
    step = 0
    while True:
        dx = cfg.alpha * kern.laplacian(maps, xe, xb.shape)
        dm = cfg.beta * kern.map_grad(xb, xe)
        res = max(float(np.max(np.abs(dx))) if dx.size else 0.0,
                  float(np.max(np.abs(dm))) if dm.size else 0.0)
        done = res < cfg.residual_tol
        if done or step == cfg.max_steps or step % cfg.record_every == 0:
            traj.record(Snapshot(step, xb.reshape(-1, c).copy(), _stack(maps), psi, res))
        if done:
            traj.converged = True
            break
        if step == cfg.max_steps:
            break
        while True:
            maps_new = maps - h * dm
            if cfg.alternating:
                xe_mid = kern.edge_diff(maps_new, xb)
                xb_new = xb - h * cfg.alpha * kern.laplacian(maps_new, xe_mid, xb.shape)
            else:
                xb_new = xb - h * dx
            xe_new = kern.edge_diff(maps_new, xb_new)
            psi_new = float(np.sum(xe_new * xe_new))
            if np.isfinite(psi_new) and psi_new <= psi + cfg.energy_rtol * psi0:
                break
            if halvings >= cfg.max_halvings:
                raise DivergenceError(
                    f"energy increased from {psi:.6g} to {psi_new:.6g} at step {step} "
                    f"after {halvings} halvings (step size {h:.3g})",
                    step=step, energy_before=psi, energy_after=psi_new)
            h /= 2
            halvings += 1
        xb, maps, xe, psi = xb_new, maps_new, xe_new, psi_new
        step += 1
    traj.steps = step
    traj.step_size = h
    return traj


def joint_reference_step(s: CellularSheaf, x, h: float, alpha: float = 1.0, beta: float = 1.0):
    """One Jacobi Euler step of the joint flow via the public operators (test oracle)."""
    x = _as_signal(x, s.n * s.d)
    f = to_restriction_stack(s)
    dx, df = _joint_rhs(s, x, f, DiffusionConfig(alpha=alpha, beta=beta))
    return x - h * dx, sheaf_from_stack(s.graph, f - h * df)


@dataclass(frozen=True)
class Certificate:
    certified: bool
    node: Optional[int]
    min_eigenvalues: np.ndarray

    def __bool__(self):
        return self.certified


def certificate_blocks(s0: CellularSheaf, x0, alpha: float, beta: float) -> np.ndarray:
    """Node-diagonal ``d x d`` blocks of ``alpha * Delta_F - beta * x0 x0^T``."""
    x = np.asarray(x0, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("the certificate is defined for single-channel signals only")
        x = x[:, 0]
    xb = node_blocks(x, s0.n, s0.d)[..., 0]
    outer = xb[:, :, None] * xb[:, None, :]
    return alpha * degree_blocks(s0) - beta * outer


def nonzero_certificate(s0: CellularSheaf, x0, alpha: float, beta: float) -> Certificate:
    """Check whether some diagonal block fails to be positive semidefinite.

    If it does, the joint trajectory started at ``(x0, s0)`` converges to a
    limit with non-zero features.  The witness is the node whose block has
    the most negative eigenvalue.
    """
    blocks = certificate_blocks(s0, x0, alpha, beta)
    mins = np.linalg.eigvalsh(blocks)[:, 0] if len(blocks) else np.zeros(0)
    if len(mins) and mins.min() < -CERT_EIG_TOL:
        return Certificate(True, int(np.argmin(mins)), mins)
    return Certificate(False, None, mins)


def find_scaling_k(s0: CellularSheaf, x0, alpha: float, beta: float) -> float:
    """Smallest ``k`` in ``1, 2, 4, ...`` for which ``k * x0`` is certified."""
    x = np.asarray(x0, dtype=np.float64)
    if not np.any(x):
        raise ValueError("x0 is zero: no scaling can certify a non-zero limit")
    k = 1.0
    for _ in range(MAX_DOUBLINGS + 1):
        if nonzero_certificate(s0, k * x, alpha, beta):
            return k
        k *= 2.0
    raise RuntimeError(f"no certifying scale found within {MAX_DOUBLINGS} doublings")


def with_step(cfg: DiffusionConfig, step_size: float) -> DiffusionConfig:
    return replace(cfg, step_size=step_size)
