"""Three-compartment voxel substrate: axon cylinders, cell spheres, free water.

Units are micrometres throughout. Cylinders run parallel to +z on a square
lattice whose first row sits half a pitch from the ``x = 0`` and ``y = 0``
faces, so those faces are mirror planes of the lattice. Only complete
cylinders are kept. Spheres sit on a cubic lattice whose x/y coordinates are
fiber-lattice interstices, and every sphere lies wholly inside the voxel.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _kernel


class GeometryError(ValueError):
    """Raised for infeasible or inconsistent voxel configurations."""


class Compartment(enum.IntEnum):
    IA = _kernel.IA
    ICEA = _kernel.ICEA
    EAEC = _kernel.EAEC


CELL_FRACTION_TOLERANCE = 0.002


@dataclass(frozen=True)
class VoxelGeometry:
    """Immutable lattice substrate inside the cube ``[0, side]**3``.

    ``fiber_count`` and ``cell_counts`` are per-axis counts; a zero count
    disables that compartment.
    """

    side: float
    fiber_radius: float = 0.0
    fiber_center_spacing: float = 0.0
    fiber_count: int = 0
    cell_radius: float = 0.0
    cell_center_spacing: float = 0.0
    cell_counts: tuple = (0, 0, 0)
    cell_origin: tuple = (0.0, 0.0, 0.0)
    fiber_axis: tuple = field(default=(0.0, 0.0, 1.0), init=False)

    def __post_init__(self):
        if not self.side > 0:
            raise GeometryError("voxel side must be positive")
        if self.fiber_count:
            if not 0 < self.fiber_radius < self.fiber_center_spacing / 2:
                raise GeometryError(
                    "overlapping-fibers: fiber radius must lie in (0, pitch/2)"
                )
        if any(self.cell_counts):
            if self.cell_radius <= 0:
                raise GeometryError("cell radius must be positive")
            if min(self.cell_counts) > 0 and max(self.cell_counts) > 1:
                if self.cell_center_spacing <= 2 * self.cell_radius:
                    raise GeometryError("cell spheres would overlap")

    @property
    def fiber_origin(self) -> float:
        return 0.5 * self.fiber_center_spacing

    @property
    def n_fibers(self) -> int:
        return self.fiber_count**2

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.cell_counts
        return nx * ny * nz

    @property
    def volume(self) -> float:
        return self.side**3

    def fiber_centers(self) -> np.ndarray:
        """(n_fibers, 2) axis positions, index ``i * fiber_count + j``."""
        c = self.fiber_origin + self.fiber_center_spacing * np.arange(self.fiber_count)
        xx, yy = np.meshgrid(c, c, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_centers(self) -> np.ndarray:
        nx, ny, nz = self.cell_counts
        q = self.cell_center_spacing
        axes = [o + q * np.arange(n) for o, n in zip(self.cell_origin, (nx, ny, nz))]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([g.ravel() for g in grid])

    def kernel_arrays(self):
        """Flat float/int parameter arrays consumed by the compiled kernels."""
        fgeo = np.array(
            [
                self.side,
                self.fiber_origin,
                self.fiber_center_spacing,
                self.fiber_radius,
                self.cell_origin[0],
                self.cell_origin[1],
                self.cell_origin[2],
                self.cell_center_spacing,
                self.cell_radius,
            ],
            dtype=np.float64,
        )
        igeo = np.array([self.fiber_count, *self.cell_counts], dtype=np.int64)
        return fgeo, igeo


def _lattice_count(side, pitch):
    return int(math.floor(side / pitch + 1e-9))


def _cell_block(side, radius, pitch, n, fiber_pitch):
    """Origin of an ``n``-per-axis sphere block centred in the voxel.

    x/y are snapped to the nearest fiber interstice when fibers exist. Returns
    None when the block does not fit inside the voxel.
    """
    span = (n - 1) * pitch
    start = 0.5 * (side - span)
    xy = start
    if fiber_pitch:
        xy = round(start / fiber_pitch) * fiber_pitch
        if xy - radius < 0:
            xy += fiber_pitch
        elif xy + span + radius > side:
            xy -= fiber_pitch
    for lo in (xy, start):
        if lo - radius < -1e-9 or lo + span + radius > side + 1e-9:
            return None
    return (xy, xy, start)


def build_voxel(
    side_um,
    fiber_radius_um=0.0,
    fiber_pitch_um=0.0,
    cell_radius_um=0.0,
    cell_fraction_target=None,
    cell_pitch_um=None,
):
    """Build the lattice voxel from geometry-config values.

    With ``cell_fraction_target`` the sphere count per axis is chosen so that
    the net (fiber-corrected) cell fraction is as close as possible to the
    target; the pitch is the even spacing for that count, rounded to a
    multiple of the fiber pitch so every sphere stays on an interstice.

    Raises
    ------
    GeometryError
        ``overlapping-fibers`` when ``fiber_radius >= pitch / 2``;
        ``infeasible-target`` when no sphere lattice gets within 0.2
        percentage points of the requested cell fraction.
    """
    side = float(side_um)
    fiber_count = 0
    if fiber_radius_um and fiber_pitch_um:
        if fiber_radius_um >= fiber_pitch_um / 2:
            raise GeometryError(
                "overlapping-fibers: fiber radius must be below half the pitch"
            )
        fiber_count = _lattice_count(side, fiber_pitch_um)
    base = dict(
        side=side,
        fiber_radius=float(fiber_radius_um) if fiber_count else 0.0,
        fiber_center_spacing=float(fiber_pitch_um) if fiber_count else 0.0,
        fiber_count=fiber_count,
    )
    fiber_pitch = base["fiber_center_spacing"]

    if not cell_radius_um or (cell_fraction_target is None and cell_pitch_um is None):
        return VoxelGeometry(**base)
    if cell_fraction_target is not None and cell_pitch_um is not None:
        raise GeometryError("give either cell_fraction_target or cell_pitch_um, not both")

    radius = float(cell_radius_um)
    if cell_pitch_um is not None:
        pitch = float(cell_pitch_um)
        if pitch <= 2 * radius:
            raise GeometryError("cell pitch must exceed the cell diameter")
        n = int(math.floor((side - 2 * radius) / pitch)) + 1
        while n > 0:
            origin = _cell_block(side, radius, pitch, n, fiber_pitch)
            if origin is not None:
                return VoxelGeometry(
                    **base,
                    cell_radius=radius,
                    cell_center_spacing=pitch,
                    cell_counts=(n, n, n),
                    cell_origin=origin,
                )
            n -= 1
        raise GeometryError("no cell sphere fits inside the voxel")

    target = float(cell_fraction_target)
    if target == 0:
        return VoxelGeometry(**base)
    if not 0 < target < 1:
        raise GeometryError("cell fraction target must lie in [0, 1)")
    best = None
    n_max = int(math.floor(side / (2 * radius)))
    for n in range(1, n_max + 1):
        pitch = side / n
        if fiber_pitch:
            pitch = max(round(pitch / fiber_pitch), 1) * fiber_pitch
            while pitch <= 2 * radius:
                pitch += fiber_pitch
        if n > 1 and pitch <= 2 * radius:
            continue
        origin = _cell_block(side, radius, pitch, n, fiber_pitch)
        if origin is None:
            continue
        g = VoxelGeometry(
            **base,
            cell_radius=radius,
            cell_center_spacing=pitch,
            cell_counts=(n, n, n),
            cell_origin=origin,
        )
        err = abs(net_cell_volume(g) / g.volume - target)
        if best is None or err < best[0]:
            best = (err, g)
    if best is None or best[0] > CELL_FRACTION_TOLERANCE:
        raise GeometryError(
            f"infeasible-target: cell fraction {target} unreachable with "
            f"non-overlapping spheres of radius {radius}"
        )
    return best[1]


def from_config(block: dict) -> VoxelGeometry:
    """Build a voxel from a harness geometry block (``*_um`` keys)."""
    return build_voxel(
        side_um=block.get("side_um", 100.0),
        fiber_radius_um=block.get("fiber_radius_um", 0.0) or 0.0,
        fiber_pitch_um=block.get("fiber_pitch_um", 0.0) or 0.0,
        cell_radius_um=block.get("cell_radius_um", 0.0) or 0.0,
        cell_fraction_target=block.get("cell_fraction_target"),
        cell_pitch_um=block.get("cell_pitch_um"),
    )


def classify_points(points, g: VoxelGeometry) -> np.ndarray:
    """Vectorised compartment labels for an (n, 3) array of points."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if np.any(pts < 0) or np.any(pts > g.side):
        raise GeometryError("out-of-voxel point")
    fgeo, igeo = g.kernel_arrays()
    return _kernel.classify_many(pts, fgeo, igeo)[0]


def classify(p, g: VoxelGeometry) -> Compartment:
    """Compartment of a single point; boundary points count as interior."""
    return Compartment(int(classify_points(np.asarray(p, dtype=float)[None, :], g)[0]))


def _slab_area(x, d, r, r1):
    # chord of the sphere cross-section at x, clipped to the cylinder chord
    w2 = r * r - x * x
    h2 = r1 * r1 - (x - d) ** 2
    if w2 <= 0 or h2 <= 0:
        return 0.0
    w = math.sqrt(w2)
    m = min(math.sqrt(h2), w)
    return 2.0 * (m * math.sqrt(max(w2 - m * m, 0.0)) + w2 * math.asin(min(m / w, 1.0)))


@functools.lru_cache(maxsize=4096)
def _fiber_in_sphere(d, r, r1):
    if d >= r + r1:
        return 0.0
    if d + r <= r1:
        return 4.0 / 3.0 * math.pi * r**3
    lo = max(-r, d - r1)
    hi = min(r, d + r1)
    points = []
    if d > 0:
        xs = (r * r - r1 * r1 + d * d) / (2 * d)
        if lo < xs < hi:
            points.append(xs)
    val, _ = integrate.quad(
        _slab_area,
        lo,
        hi,
        args=(d, r, r1),
        points=points or None,
        epsabs=0.0,
        epsrel=1e-10,
        limit=200,
    )
    return val


def fiber_in_sphere_volume(sphere, cylinder) -> float:
    """Volume of a z-parallel infinite cylinder inside a sphere.

    Parameters
    ----------
    sphere : (center, r)
        Sphere centre (x, y, z) and radius.
    cylinder : ((a, b), r1)
        Axis position in the xy plane and radius.

    The z and y integrals of the intersection are done in closed form and the
    remaining x integral by adaptive quadrature, split at the x where the
    cylinder and sphere chords are equal.
    """
    (center, r), ((a, b), r1) = sphere, cylinder
    if r <= 0 or r1 <= 0:
        raise GeometryError("radii must be positive")
    d = math.hypot(a - center[0], b - center[1])
    return _fiber_in_sphere(round(d, 12), float(r), float(r1))


def net_cell_volume(g: VoxelGeometry) -> float:
    """Total sphere volume minus every fiber segment piercing each sphere."""
    if g.n_cells == 0:
        return 0.0
    r = g.cell_radius
    sphere_vol = 4.0 / 3.0 * math.pi * r**3
    total = 0.0
    p = g.fiber_center_spacing
    for c in g.cell_centers():
        vol = sphere_vol
        if g.fiber_count:
            reach = r + g.fiber_radius
            lo = max(int(math.ceil((c[0] - reach - g.fiber_origin) / p)), 0)
            hi = min(int(math.floor((c[0] + reach - g.fiber_origin) / p)), g.fiber_count - 1)
            loy = max(int(math.ceil((c[1] - reach - g.fiber_origin) / p)), 0)
            hiy = min(int(math.floor((c[1] + reach - g.fiber_origin) / p)), g.fiber_count - 1)
            for i in range(lo, hi + 1):
                for j in range(loy, hiy + 1):
                    axis = (g.fiber_origin + i * p, g.fiber_origin + j * p)
                    vol -= fiber_in_sphere_volume((c, r), (axis, g.fiber_radius))
        total += vol
    return total


def volume_fractions(g: VoxelGeometry) -> dict:
    """Exact fiber, cell and free-water volume fractions of the voxel."""
    f_fiber = g.n_fibers * math.pi * g.fiber_radius**2 / g.side**2
    f_cell = net_cell_volume(g) / g.volume
    return {"f_fiber": f_fiber, "f_cell": f_cell, "f_free": 1.0 - f_fiber - f_cell}
