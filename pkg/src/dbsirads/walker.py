"""Monte-Carlo spin random walk in the three-compartment voxel."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernel, _rng
from .geometry import Compartment, VoxelGeometry

DEFAULT_TIMESTEP = 5e-3  # ms

HEALTHY = 1
DISEASED = 0
NO_FIBER = -1


@dataclass(frozen=True)
class HealthMix:
    fraction_healthy: float
    D_healthy: float = 2.0
    D_diseased: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.fraction_healthy <= 1.0:
            raise ValueError("fraction_healthy must lie in [0, 1]")


@dataclass(frozen=True)
class WalkConfig:
    n_spins: int
    timestep: float = DEFAULT_TIMESTEP
    n_steps: Optional[int] = None
    D_IA: float = 2.0
    D_ICEA: float = 3.0
    D_EAEC: float = 3.0
    seed: int = 0
    health_mix: Optional[HealthMix] = None

    def __post_init__(self):
        if self.n_spins <= 0:
            raise ValueError("n_spins must be positive")
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        ds = [self.D_IA, self.D_ICEA, self.D_EAEC]
        if self.health_mix is not None:
            ds += [self.health_mix.D_healthy, self.health_mix.D_diseased]
        if any(not 0.0 <= d <= 3.0 for d in ds):
            raise ValueError("diffusivities must lie in [0, 3] um^2/ms")

    @classmethod
    def from_config(cls, block: dict, n_steps=None):
        mix = block.get("health_mix")
        return cls(
            n_spins=int(block.get("n_spins", 100_000)),
            timestep=float(block.get("timestep_us", 5.0)) * 1e-3,
            n_steps=n_steps,
            D_IA=float(block.get("D_IA", 2.0)),
            D_ICEA=float(block.get("D_ICEA", 3.0)),
            D_EAEC=float(block.get("D_EAEC", 3.0)),
            seed=int(block.get("seed", 0)),
            health_mix=HealthMix(**mix) if mix else None,
        )


@dataclass
class SpinEnsemble:
    """Spin state after (or before) a walk.

    ``positions`` stay inside the voxel; ``unfolded`` continues each path
    through the mirror images of the voxel and is what displacement and
    phase are computed from. ``moments[j, g]`` is the gradient moment of
    spin ``j`` for timing group ``g`` (see ``sequence.phases_from_moments``).
    """

    positions: np.ndarray
    start_positions: np.ndarray
    unfolded: np.ndarray
    signs: np.ndarray
    compartment_at_start: np.ndarray
    owner: np.ndarray
    diffusivity: np.ndarray
    fiber_health_label: np.ndarray
    moments: np.ndarray = None
    group: np.ndarray = None
    step_counts: np.ndarray = None
    elapsed: float = 0.0
    n_steps_done: int = 0

    @property
    def n_spins(self) -> int:
        return self.positions.shape[0]

    @property
    def displacements(self) -> np.ndarray:
        return self.unfolded - self.start_positions

    def selection(self, compartment=None):
        """Boolean mask of spins that started in ``compartment`` (None: all)."""
        if compartment is None:
            return None
        return self.compartment_at_start == int(compartment)

    def census(self) -> dict:
        n = self.n_spins
        return {c.name: float(np.count_nonzero(self.compartment_at_start == c)) / n
                for c in Compartment}

    def phase_accumulators(self, scheme) -> np.ndarray:
        """(n_spins, n_acquisitions) net phases in radians."""
        from .sequence import phases_from_moments

        return phases_from_moments(self.moments, scheme, self.group)


@dataclass
class DisplacementTensor:
    tensor: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    per_axis: np.ndarray
    n_spins: int = field(default=0)

    @property
    def mean_diffusivity(self) -> float:
        return float(np.trace(self.tensor) / 3.0)

    @property
    def axis_tensor(self) -> np.ndarray:
        """<R R^T> / (2 tau): the tensor whose diagonal is ``per_axis``."""
        return 3.0 * self.tensor

    @property
    def axis_eigenvalues(self) -> np.ndarray:
        return 3.0 * self.eigenvalues


def step_length(D, t_s):
    """Step length sqrt(6 D t_s) in um for diffusivity D (um^2/ms)."""
    if D < 0:
        raise ValueError("diffusivity must be non-negative")
    return math.sqrt(6.0 * D * t_s)


def sample_direction(rng: np.random.Generator) -> np.ndarray:
    """Uniform unit vector: a normalised standard-normal 3-vector."""
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 1e-150:
            return v / n


def fiber_health(g: VoxelGeometry, mix: Optional[HealthMix], seed: int) -> np.ndarray:
    """Per-fiber HEALTHY/DISEASED labels.

    ``round((1 - fraction_healthy) * n_fibers)`` fibers, picked by a seeded
    permutation, are diseased.
    """
    labels = np.full(g.n_fibers, HEALTHY, dtype=np.int8)
    if mix is None or g.n_fibers == 0:
        return labels
    n_dis = int(math.floor((1.0 - mix.fraction_healthy) * g.n_fibers + 0.5))
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    labels[rng.permutation(g.n_fibers)[:n_dis]] = DISEASED
    return labels


def init_spins(g: VoxelGeometry, cfg: WalkConfig) -> SpinEnsemble:
    """Uniformly distributed spins labelled by starting compartment."""
    if cfg.n_spins <= 0:
        raise ValueError("n_spins must be positive")
    k0, k1 = _rng.split_seed(cfg.seed)
    pos = _kernel.uniform_positions(cfg.n_spins, g.side, k0, k1)
    fgeo, igeo = g.kernel_arrays()
    comp, owner = _kernel.classify_many(pos, fgeo, igeo)

    D = np.where(comp == Compartment.IA, cfg.D_IA,
                 np.where(comp == Compartment.ICEA, cfg.D_ICEA, cfg.D_EAEC)).astype(float)
    health = np.full(cfg.n_spins, NO_FIBER, dtype=np.int8)
    ia = comp == Compartment.IA
    if ia.any():
        labels = fiber_health(g, cfg.health_mix, cfg.seed)
        health[ia] = labels[owner[ia]]
        if cfg.health_mix is not None:
            D[ia] = np.where(health[ia] == HEALTHY, cfg.health_mix.D_healthy,
                             cfg.health_mix.D_diseased)

    for name, d in (("IA", cfg.D_IA), ("ICEA", cfg.D_ICEA), ("EAEC", cfg.D_EAEC)):
        if g.fiber_count and step_length(d, cfg.timestep) >= g.fiber_radius:
            warnings.warn(f"{name} step length is not below the fiber radius",
                          RuntimeWarning, stacklevel=2)

    return SpinEnsemble(
        positions=pos.copy(),
        start_positions=pos,
        unfolded=pos.copy(),
        signs=np.ones((cfg.n_spins, 3)),
        compartment_at_start=comp,
        owner=owner,
        diffusivity=D,
        fiber_health_label=health,
    )


def advance(position, compartment, owner, length, direction, g: VoxelGeometry):
    """One step for a single spin; returns (new_position, status).

    status is ``"free"``, ``"reflected"`` or ``"rejected"``.
    """
    pos = np.array(position, dtype=float).reshape(1, 3)
    unf = pos.copy()
    sgn = np.ones((1, 3))
    fgeo, igeo = g.kernel_arrays()
    u = np.asarray(direction, dtype=float)
    code = _kernel.advance(pos, unf, sgn, 0, int(compartment), int(owner), float(length),
                           u[0], u[1], u[2], fgeo, igeo)
    return pos[0], ("free", "reflected", "rejected")[code]


def simulate(g: VoxelGeometry, cfg: WalkConfig, scheme, ensemble=None) -> SpinEnsemble:
    """Walk all spins and integrate the PGSE gradient moments on the way.

    The number of steps defaults to the scheme's echo span over the
    timestep. The result is bit-identical for a given seed regardless of
    the number of threads.
    """
    windows, group = scheme.step_windows(cfg.timestep)
    n_steps = cfg.n_steps
    if n_steps is None:
        n_steps = int(windows[:, 3].max())
    if n_steps < windows[:, 3].max():
        raise ValueError(
            f"duration mismatch: {n_steps} steps of {cfg.timestep} ms do not cover "
            f"the {scheme.echo_span} ms echo span"
        )
    e = ensemble if ensemble is not None else init_spins(g, cfg)
    e.moments = np.zeros((e.n_spins, windows.shape[0], 3))
    e.group = group
    e.step_counts = np.zeros((e.n_spins, 3), dtype=np.int64)
    lengths = np.sqrt(6.0 * e.diffusivity * cfg.timestep)
    fgeo, igeo = g.kernel_arrays()
    k0, k1 = _rng.split_seed(cfg.seed)
    _kernel.walk(e.positions, e.unfolded, e.signs, e.compartment_at_start.astype(np.int64),
                 e.owner, lengths, fgeo, igeo, cfg.timestep, 0, n_steps, k0, k1,
                 windows, e.moments, e.step_counts)
    e.elapsed = n_steps * cfg.timestep
    e.n_steps_done = n_steps
    return e


def displacement_tensor(e: SpinEnsemble, tau: float, compartment=None) -> DisplacementTensor:
    """Diffusion tensor <R R^T> / (6 tau) of the net (unfolded) displacements.

    With this normalisation free diffusion gives eigenvalues D/3 each.
    ``per_axis`` holds the conventional one-dimensional estimate
    ``<R_i^2> / (2 tau)`` for each Cartesian axis and ``axis_eigenvalues``
    the matching eigenvalues (D each for free diffusion).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    sel = e.selection(compartment)
    R = e.displacements if sel is None else e.displacements[sel]
    if R.shape[0] == 0:
        raise ValueError("empty selection")
    second = R.T @ R / R.shape[0]
    tensor = second / (6.0 * tau)
    w, v = np.linalg.eigh(tensor)
    order = np.argsort(w)[::-1]
    return DisplacementTensor(
        tensor=tensor,
        eigenvalues=w[order],
        eigenvectors=v[:, order],
        per_axis=np.diag(second) / (2.0 * tau),
        n_spins=R.shape[0],
    )


def record_trajectories(g: VoxelGeometry, cfg: WalkConfig, n_steps: int, spin_ids) -> np.ndarray:
    """Folded positions (len(spin_ids), n_steps + 1, 3) of selected spins.

    Paths coincide with the same spins in a full ``simulate`` run.
    """
    full = init_spins(g, cfg)
    ids = np.asarray(spin_ids, dtype=np.int64)
    pos = full.positions[ids].copy()
    unf = pos.copy()
    sgn = np.ones_like(pos)
    lengths = np.sqrt(6.0 * full.diffusivity[ids] * cfg.timestep)
    out = np.empty((len(ids), n_steps + 1, 3))
    fgeo, igeo = g.kernel_arrays()
    k0, k1 = _rng.split_seed(cfg.seed)
    _kernel.walk_record(pos, unf, sgn, full.compartment_at_start[ids].astype(np.int64),
                        full.owner[ids], lengths, ids, fgeo, igeo, n_steps, k0, k1, out)
    return out


def write_trajectories(path, trajectories, spin_ids):
    """Binary dump: records of (uint32 spin id, uint32 step, 3 x float32 xyz)."""
    rec = np.dtype([("spin", "<u4"), ("step", "<u4"), ("xyz", "<f4", (3,))])
    n, t, _ = trajectories.shape
    out = np.empty(n * t, dtype=rec)
    out["spin"] = np.repeat(np.asarray(spin_ids, dtype=np.uint32), t)
    out["step"] = np.tile(np.arange(t, dtype=np.uint32), n)
    out["xyz"] = trajectories.reshape(-1, 3).astype(np.float32)
    out.tofile(path)
    return rec
