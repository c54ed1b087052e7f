"""Compiled random-walk kernels.

Geometry arrives as two flat arrays (see ``VoxelGeometry.kernel_arrays``):

    fgeo = [side, fiber_origin, fiber_pitch, fiber_radius,
            cell_x0, cell_y0, cell_z0, cell_pitch, cell_radius]
    igeo = [fibers_per_axis, cells_x, cells_y, cells_z]

Spins live in folded coordinates inside the cube. Each spin also carries a
per-axis sign so its unfolded trajectory (the walk continued through the
mirror-image neighbours) can be integrated for phase and displacement.
"""

import math

import numba as nb
import numpy as np

from ._rng import TAG_POSITION, direction, uniforms4

IA = 0
ICEA = 1
EAEC = 2

HIT_NONE = 0
HIT_FACE = 1
HIT_FIBER = 2
HIT_CELL = 3

STEP_FREE = 0
STEP_REFLECTED = 1
STEP_REJECTED = 2


@nb.njit(cache=True)
def _nearest_index(x, origin, pitch, n):
    i = int(math.floor((x - origin) / pitch + 0.5))
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@nb.njit(cache=True)
def classify_point(x, y, z, fgeo, igeo):
    """Return (compartment, owner); owner is the fiber or cell index, or -1."""
    nf = igeo[0]
    if nf > 0:
        f0 = fgeo[1]
        fp = fgeo[2]
        fr = fgeo[3]
        i = _nearest_index(x, f0, fp, nf)
        j = _nearest_index(y, f0, fp, nf)
        dx = x - (f0 + i * fp)
        dy = y - (f0 + j * fp)
        if dx * dx + dy * dy <= fr * fr:
            return IA, i * nf + j
    ncx = igeo[1]
    ncy = igeo[2]
    ncz = igeo[3]
    if ncx > 0 and ncy > 0 and ncz > 0:
        cq = fgeo[7]
        cr = fgeo[8]
        if ncx > 1:
            i = _nearest_index(x, fgeo[4], cq, ncx)
        else:
            i = 0
        if ncy > 1:
            j = _nearest_index(y, fgeo[5], cq, ncy)
        else:
            j = 0
        if ncz > 1:
            k = _nearest_index(z, fgeo[6], cq, ncz)
        else:
            k = 0
        dx = x - (fgeo[4] + i * cq)
        dy = y - (fgeo[5] + j * cq)
        dz = z - (fgeo[6] + k * cq)
        if dx * dx + dy * dy + dz * dz <= cr * cr:
            return ICEA, (i * ncy + j) * ncz + k
    return EAEC, -1


@nb.njit(cache=True)
def classify_many(pts, fgeo, igeo):
    n = pts.shape[0]
    comp = np.empty(n, dtype=np.int8)
    owner = np.empty(n, dtype=np.int64)
    for m in range(n):
        c, o = classify_point(pts[m, 0], pts[m, 1], pts[m, 2], fgeo, igeo)
        comp[m] = c
        owner[m] = o
    return comp, owner


@nb.njit(cache=True)
def _exit_root(a, b, c):
    # start inside (c <= 0): the positive root of a t^2 + b t + c
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        disc = 0.0
    s = math.sqrt(disc)
    if b >= 0.0:
        return -2.0 * c / (b + s) if b + s > 0.0 else 0.0
    return (-b + s) / (2.0 * a)


@nb.njit(cache=True)
def _entry_root(a, b, c):
    # start outside (c > 0): first crossing, or -1 if the line misses
    if b >= 0.0:
        return -1.0
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return -1.0
    return 2.0 * c / (-b + math.sqrt(disc))


@nb.njit(cache=True)
def _index_range(lo, hi, origin, pitch, n):
    a = int(math.ceil((lo - origin) / pitch))
    b = int(math.floor((hi - origin) / pitch))
    if a < 0:
        a = 0
    if b > n - 1:
        b = n - 1
    return a, b


@nb.njit(cache=True)
def first_hit(px, py, pz, dx, dy, dz, comp, owner, skip_kind, skip_idx, fgeo, igeo):
    """First barrier crossed by the segment p -> p + d.

    Returns (t, kind, index, nx, ny, nz) with t in (0, 1] the segment
    parameter and n the unit surface normal; kind is HIT_NONE when the
    segment stays inside the spin's compartment.
    """
    side = fgeo[0]
    best_t = 2.0
    kind = HIT_NONE
    idx = -1
    nx = 0.0
    ny = 0.0
    nz = 0.0

    # voxel faces: index 2*axis + (0 low | 1 high)
    p3 = (px, py, pz)
    d3 = (dx, dy, dz)
    for ax in range(3):
        pa = p3[ax]
        da = d3[ax]
        e = pa + da
        if e < 0.0 and da < 0.0:
            face = 2 * ax
            if not (skip_kind == HIT_FACE and skip_idx == face):
                t = -pa / da
                if t < best_t:
                    best_t = t
                    kind = HIT_FACE
                    idx = face
        elif e > side and da > 0.0:
            face = 2 * ax + 1
            if not (skip_kind == HIT_FACE and skip_idx == face):
                t = (side - pa) / da
                if t < best_t:
                    best_t = t
                    kind = HIT_FACE
                    idx = face

    nf = igeo[0]
    a2 = dx * dx + dy * dy
    if nf > 0 and a2 > 0.0:
        f0 = fgeo[1]
        fp = fgeo[2]
        fr = fgeo[3]
        if comp == IA:
            i = owner // nf
            j = owner - i * nf
            qx = px - (f0 + i * fp)
            qy = py - (f0 + j * fp)
            c = qx * qx + qy * qy - fr * fr
            if c > 0.0:
                c = 0.0
            t = _exit_root(a2, 2.0 * (qx * dx + qy * dy), c)
            if t < 1.0 and t < best_t:
                best_t = t
                kind = HIT_FIBER
                idx = owner
        else:
            ilo, ihi = _index_range(min(px, px + dx) - fr, max(px, px + dx) + fr, f0, fp, nf)
            jlo, jhi = _index_range(min(py, py + dy) - fr, max(py, py + dy) + fr, f0, fp, nf)
            for i in range(ilo, ihi + 1):
                for j in range(jlo, jhi + 1):
                    fid = i * nf + j
                    if skip_kind == HIT_FIBER and skip_idx == fid:
                        continue
                    qx = px - (f0 + i * fp)
                    qy = py - (f0 + j * fp)
                    c = qx * qx + qy * qy - fr * fr
                    if c <= 0.0:
                        # numerically on the wall: treat as immediate contact
                        t = 0.0
                    else:
                        t = _entry_root(a2, 2.0 * (qx * dx + qy * dy), c)
                        if t < 0.0:
                            continue
                    if t <= 1.0 and t < best_t:
                        best_t = t
                        kind = HIT_FIBER
                        idx = fid

    ncx = igeo[1]
    ncy = igeo[2]
    ncz = igeo[3]
    a3 = dx * dx + dy * dy + dz * dz
    if ncx > 0 and ncy > 0 and ncz > 0 and comp != IA and a3 > 0.0:
        cq = fgeo[7]
        cr = fgeo[8]
        if comp == ICEA:
            k = owner % ncz
            j = (owner // ncz) % ncy
            i = owner // (ncz * ncy)
            qx = px - (fgeo[4] + i * cq)
            qy = py - (fgeo[5] + j * cq)
            qz = pz - (fgeo[6] + k * cq)
            c = qx * qx + qy * qy + qz * qz - cr * cr
            if c > 0.0:
                c = 0.0
            t = _exit_root(a3, 2.0 * (qx * dx + qy * dy + qz * dz), c)
            if t < 1.0 and t < best_t:
                best_t = t
                kind = HIT_CELL
                idx = owner
        else:
            if ncx > 1:
                ilo, ihi = _index_range(min(px, px + dx) - cr, max(px, px + dx) + cr, fgeo[4], cq, ncx)
            else:
                ilo, ihi = 0, 0
            if ncy > 1:
                jlo, jhi = _index_range(min(py, py + dy) - cr, max(py, py + dy) + cr, fgeo[5], cq, ncy)
            else:
                jlo, jhi = 0, 0
            if ncz > 1:
                klo, khi = _index_range(min(pz, pz + dz) - cr, max(pz, pz + dz) + cr, fgeo[6], cq, ncz)
            else:
                klo, khi = 0, 0
            for i in range(ilo, ihi + 1):
                for j in range(jlo, jhi + 1):
                    for k in range(klo, khi + 1):
                        cid = (i * ncy + j) * ncz + k
                        if skip_kind == HIT_CELL and skip_idx == cid:
                            continue
                        qx = px - (fgeo[4] + i * cq)
                        qy = py - (fgeo[5] + j * cq)
                        qz = pz - (fgeo[6] + k * cq)
                        c = qx * qx + qy * qy + qz * qz - cr * cr
                        if c <= 0.0:
                            t = 0.0
                        else:
                            t = _entry_root(a3, 2.0 * (qx * dx + qy * dy + qz * dz), c)
                            if t < 0.0:
                                continue
                        if t <= 1.0 and t < best_t:
                            best_t = t
                            kind = HIT_CELL
                            idx = cid

    if kind == HIT_NONE:
        return 2.0, HIT_NONE, -1, 0.0, 0.0, 0.0

    hx = px + best_t * dx
    hy = py + best_t * dy
    hz = pz + best_t * dz
    if kind == HIT_FACE:
        ax = idx // 2
        if ax == 0:
            nx = 1.0
        elif ax == 1:
            ny = 1.0
        else:
            nz = 1.0
    elif kind == HIT_FIBER:
        i = idx // nf
        j = idx - i * nf
        nx = hx - (fgeo[1] + i * fgeo[2])
        ny = hy - (fgeo[1] + j * fgeo[2])
        nrm = math.sqrt(nx * nx + ny * ny)
        if nrm > 0.0:
            nx /= nrm
            ny /= nrm
    else:
        k = idx % ncz
        j = (idx // ncz) % ncy
        i = idx // (ncz * ncy)
        nx = hx - (fgeo[4] + i * fgeo[7])
        ny = hy - (fgeo[5] + j * fgeo[7])
        nz = hz - (fgeo[6] + k * fgeo[7])
        nrm = math.sqrt(nx * nx + ny * ny + nz * nz)
        if nrm > 0.0:
            nx /= nrm
            ny /= nrm
            nz /= nrm
    return best_t, kind, idx, nx, ny, nz


@nb.njit(cache=True)
def _inside(x, y, z, side):
    return 0.0 <= x <= side and 0.0 <= y <= side and 0.0 <= z <= side


@nb.njit(cache=True)
def advance(pos, unf, sgn, j, comp, owner, length, ux, uy, uz, fgeo, igeo):
    """Move spin ``j`` one step of ``length`` along ``u`` in place.

    Single-bounce specular reflection at the first barrier; if the reflected
    leg crosses another barrier or the endpoint leaves the compartment, the
    step is rejected and the spin stays put. Returns a STEP_* code.
    """
    side = fgeo[0]
    px = pos[j, 0]
    py = pos[j, 1]
    pz = pos[j, 2]
    dx = length * ux
    dy = length * uy
    dz = length * uz
    t, kind, idx, nx, ny, nz = first_hit(px, py, pz, dx, dy, dz, comp, owner, HIT_NONE, -1, fgeo, igeo)
    if kind == HIT_NONE:
        ex = px + dx
        ey = py + dy
        ez = pz + dz
        if not _inside(ex, ey, ez, side):
            return STEP_REJECTED
        c2, o2 = classify_point(ex, ey, ez, fgeo, igeo)
        if c2 != comp or o2 != owner:
            return STEP_REJECTED
        pos[j, 0] = ex
        pos[j, 1] = ey
        pos[j, 2] = ez
        unf[j, 0] += sgn[j, 0] * dx
        unf[j, 1] += sgn[j, 1] * dy
        unf[j, 2] += sgn[j, 2] * dz
        return STEP_FREE

    hx = px + t * dx
    hy = py + t * dy
    hz = pz + t * dz
    rx = (1.0 - t) * dx
    ry = (1.0 - t) * dy
    rz = (1.0 - t) * dz
    dot = rx * nx + ry * ny + rz * nz
    rx -= 2.0 * dot * nx
    ry -= 2.0 * dot * ny
    rz -= 2.0 * dot * nz
    t2, kind2, _i2, _a, _b, _c = first_hit(hx, hy, hz, rx, ry, rz, comp, owner, kind, idx, fgeo, igeo)
    if kind2 != HIT_NONE:
        return STEP_REJECTED
    ex = hx + rx
    ey = hy + ry
    ez = hz + rz
    if not _inside(ex, ey, ez, side):
        return STEP_REJECTED
    c2, o2 = classify_point(ex, ey, ez, fgeo, igeo)
    if c2 != comp or o2 != owner:
        return STEP_REJECTED
    if kind == HIT_FACE:
        # the unfolded walk passes straight into the mirror-image voxel
        unf[j, 0] += sgn[j, 0] * dx
        unf[j, 1] += sgn[j, 1] * dy
        unf[j, 2] += sgn[j, 2] * dz
        sgn[j, idx // 2] = -sgn[j, idx // 2]
    else:
        unf[j, 0] += sgn[j, 0] * (ex - px)
        unf[j, 1] += sgn[j, 1] * (ey - py)
        unf[j, 2] += sgn[j, 2] * (ez - pz)
    pos[j, 0] = ex
    pos[j, 1] = ey
    pos[j, 2] = ez
    return STEP_REFLECTED


@nb.njit(cache=True, parallel=True)
def walk(pos, unf, sgn, comp, owner, lengths, fgeo, igeo, t_s, step0, n_steps,
         k0, k1, windows, moments, counts):
    """Advance every spin ``n_steps`` steps, integrating gradient moments.

    ``windows[g] = (s1, e1, s3, e3)`` are step-index ranges of the two
    gradient pulses of timing group ``g``; ``moments[j, g]`` accumulates
    ``sum_pulse1 x t_s - sum_pulse2 x t_s`` over the unfolded trajectory.
    ``counts[j]`` tallies (free, reflected, rejected) steps.
    """
    n = pos.shape[0]
    n_groups = windows.shape[0]
    for j in nb.prange(n):
        length = lengths[j]
        c = comp[j]
        o = owner[j]
        for s in range(n_steps):
            step = step0 + s
            for g in range(n_groups):
                if windows[g, 0] <= step < windows[g, 1]:
                    moments[j, g, 0] += unf[j, 0] * t_s
                    moments[j, g, 1] += unf[j, 1] * t_s
                    moments[j, g, 2] += unf[j, 2] * t_s
                elif windows[g, 2] <= step < windows[g, 3]:
                    moments[j, g, 0] -= unf[j, 0] * t_s
                    moments[j, g, 1] -= unf[j, 1] * t_s
                    moments[j, g, 2] -= unf[j, 2] * t_s
            if length > 0.0:
                ux, uy, uz = direction(step, j, k0, k1)
                code = advance(pos, unf, sgn, j, c, o, length, ux, uy, uz, fgeo, igeo)
                counts[j, code] += 1
            else:
                counts[j, STEP_FREE] += 1


@nb.njit(cache=True)
def walk_record(pos, unf, sgn, comp, owner, lengths, spin_ids, fgeo, igeo, n_steps, k0, k1, out):
    """Serial walk of selected spins storing folded positions per step.

    Uses the same counter streams as ``walk`` (keyed by ``spin_ids``), so the
    recorded paths coincide with the ensemble run.
    """
    for m in range(pos.shape[0]):
        out[m, 0, 0] = pos[m, 0]
        out[m, 0, 1] = pos[m, 1]
        out[m, 0, 2] = pos[m, 2]
        for s in range(n_steps):
            if lengths[m] > 0.0:
                ux, uy, uz = direction(s, spin_ids[m], k0, k1)
                advance(pos, unf, sgn, m, comp[m], owner[m], lengths[m], ux, uy, uz, fgeo, igeo)
            out[m, s + 1, 0] = pos[m, 0]
            out[m, s + 1, 1] = pos[m, 1]
            out[m, s + 1, 2] = pos[m, 2]


@nb.njit(cache=True, parallel=True)
def uniform_positions(n, side, k0, k1):
    """i.i.d. uniform points in the cube, one counter per spin."""
    out = np.empty((n, 3))
    for j in nb.prange(n):
        # step word all-ones keeps these draws disjoint from walk steps
        u0, u1, u2, _u3 = uniforms4(0xFFFFFFFF, j, TAG_POSITION, k0, k1)
        out[j, 0] = u0 * side
        out[j, 1] = u1 * side
        out[j, 2] = u2 * side
    return out
