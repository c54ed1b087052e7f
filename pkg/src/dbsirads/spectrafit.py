"""Stage-1 diffusion spectrum fit.

The signal is decomposed over a basis of axially symmetric tensors (one
fiber orientation, a grid of axial diffusivities, a shared radial
diffusivity) plus a grid of isotropic exponentials. Fractions come from
L2-damped NNLS; the radial diffusivity is picked from a sweep by the
smallest unregularised residual.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .nnls import NnlsResult, nnls_l2

DIFF_UM2_MS_TO_MM2_S = 1e-3

DEFAULT_N1 = 31
DEFAULT_N2 = 31
DEFAULT_PERP_MAX = 0.4
DEFAULT_N_PERP = 9
DEFAULT_BETA = 1e-4
DEFAULT_D_CELL_CUT = 1.5
DEFAULT_EAEC_DEDUCTION = 0.04
HEALTHY_LAMBDA_PAR = 2.0

NEGATIVE_CLAMP = 1e-3


class SpectrumError(ValueError):
    pass


def _uniform(n, hi):
    # i * hi / (n - 1) keeps round grid points (2.0, 3.0) exact
    return np.arange(n) * float(hi) / (n - 1)


@dataclass(frozen=True)
class BasisGrid:
    lambda_par_grid: np.ndarray
    iso_D_grid: np.ndarray
    lambda_perp_sweep: np.ndarray
    fiber_direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        lp = np.asarray(self.lambda_par_grid, dtype=float)
        iso = np.asarray(self.iso_D_grid, dtype=float)
        perp = np.asarray(self.lambda_perp_sweep, dtype=float)
        for name, g in (("lambda_par_grid", lp), ("iso_D_grid", iso),
                        ("lambda_perp_sweep", perp)):
            if g.ndim != 1 or g.size == 0:
                raise SpectrumError(f"{name} must be a non-empty 1-D grid")
            if np.any(np.diff(g) <= 0):
                raise SpectrumError(f"{name} must be strictly increasing")
        if lp[0] < 0 or lp[-1] > 3.0 or iso[0] < 0 or iso[-1] > 3.0:
            raise SpectrumError("diffusivity grids must lie in [0, 3] um^2/ms")
        if perp[0] < 0 or perp[-1] > DEFAULT_PERP_MAX + 1e-12:
            raise SpectrumError("lambda_perp sweep must lie in [0, 0.4] um^2/ms")
        if not np.any(lp == HEALTHY_LAMBDA_PAR):
            raise SpectrumError("lambda_par_grid must contain 2.0 exactly")
        if iso[0] != 0.0 or iso[-1] != 3.0:
            raise SpectrumError("iso_D_grid must include 0 and 3")
        d = np.asarray(self.fiber_direction, dtype=float)
        nrm = np.linalg.norm(d)
        if not nrm > 0:
            raise SpectrumError("fiber_direction must be non-zero")
        object.__setattr__(self, "lambda_par_grid", lp)
        object.__setattr__(self, "iso_D_grid", iso)
        object.__setattr__(self, "lambda_perp_sweep", perp)
        object.__setattr__(self, "fiber_direction", tuple(float(c) for c in d / nrm))

    @property
    def n1(self) -> int:
        return self.lambda_par_grid.size

    @property
    def n2(self) -> int:
        return self.iso_D_grid.size

    @property
    def healthy_index(self) -> int:
        return int(np.flatnonzero(self.lambda_par_grid == HEALTHY_LAMBDA_PAR)[0])


def default_grid(n1=DEFAULT_N1, n2=DEFAULT_N2, perp_max=DEFAULT_PERP_MAX,
                 n_perp=DEFAULT_N_PERP, fiber_direction=(0.0, 0.0, 1.0)) -> BasisGrid:
    """Uniform grids on [0, 3]; the lambda_perp sweep is uniform on [0, perp_max]."""
    if n_perp == 1:
        perp = np.zeros(1)
    else:
        perp = _uniform(n_perp, perp_max)
    return BasisGrid(_uniform(n1, 3.0), _uniform(n2, 3.0), perp, fiber_direction)


def grid_from_config(block: dict) -> BasisGrid:
    return default_grid(
        n1=int(block.get("n1", DEFAULT_N1)),
        n2=int(block.get("n2", DEFAULT_N2)),
        perp_max=float(block.get("lambda_perp_max", DEFAULT_PERP_MAX)),
        n_perp=int(block.get("n_perp", DEFAULT_N_PERP)),
        fiber_direction=tuple(block.get("fiber_direction", (0.0, 0.0, 1.0))),
    )


@dataclass
class DesignMatrix:
    """N x (n1 + n2) basis; anisotropic columns first, then isotropic."""

    matrix: np.ndarray
    lambda_par: np.ndarray
    iso_D: np.ndarray
    lambda_perp: float

    @property
    def n_aniso(self) -> int:
        return self.lambda_par.size

    @property
    def aniso(self) -> np.ndarray:
        return self.matrix[:, : self.n_aniso]

    @property
    def iso(self) -> np.ndarray:
        return self.matrix[:, self.n_aniso:]

    def column_label(self, j):
        if j < self.n_aniso:
            return ("aniso", float(self.lambda_par[j]))
        return ("iso", float(self.iso_D[j - self.n_aniso]))


def _bvals_dirs(scheme):
    b = np.asarray(scheme.bvals, dtype=float)
    d = np.asarray(scheme.directions, dtype=float).reshape(-1, 3)
    if b.shape[0] != d.shape[0]:
        raise SpectrumError("scheme bvals and directions differ in length")
    return b, d


def aniso_curves(bvals, cos2, lambda_par, lambda_perp):
    """exp(-b lperp) exp(-b (lpar - lperp) cos^2 theta) for each lpar column."""
    b = np.asarray(bvals, dtype=float)[:, None]
    c2 = np.asarray(cos2, dtype=float)[:, None]
    lp = np.atleast_1d(np.asarray(lambda_par, dtype=float))[None, :]
    return np.exp(-b * lambda_perp) * np.exp(-b * (lp - lambda_perp) * c2)


def cos2_theta(scheme, fiber_direction):
    _, d = _bvals_dirs(scheme)
    c = d @ np.asarray(fiber_direction, dtype=float)
    return c * c


def build_design_matrix(scheme, grid: BasisGrid, lambda_perp: float) -> DesignMatrix:
    """Anisotropic columns m_ki and isotropic columns p_kj for one lambda_perp.

    ``scheme`` only needs ``bvals`` (ms/um^2) and unit ``directions``.
    """
    b, _ = _bvals_dirs(scheme)
    c2 = cos2_theta(scheme, grid.fiber_direction)
    m = aniso_curves(b, c2, grid.lambda_par_grid, lambda_perp)
    p = np.exp(-b[:, None] * grid.iso_D_grid[None, :])
    return DesignMatrix(np.hstack([m, p]), grid.lambda_par_grid.copy(),
                        grid.iso_D_grid.copy(), float(lambda_perp))


@dataclass
class SpectrumFit:
    """Stage-1 result.

    ``fractions`` holds the n1 anisotropic then n2 isotropic coefficients.
    ``eaec_removed`` records anisotropic mass taken off by the EAEC
    deduction (zero until ``deduct_eaec_anisotropy`` is applied).
    """

    fractions: np.ndarray
    grid: BasisGrid
    lambda_perp: float
    residuals: np.ndarray
    design: DesignMatrix
    signal: np.ndarray
    beta: float
    d_cell_cut: float = DEFAULT_D_CELL_CUT
    solver: NnlsResult = None
    eaec_removed: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.eaec_removed is None:
            self.eaec_removed = np.zeros(self.grid.n1)

    @property
    def aniso_fractions(self) -> np.ndarray:
        return self.fractions[: self.grid.n1]

    @property
    def iso_fractions(self) -> np.ndarray:
        return self.fractions[self.grid.n1:]

    @property
    def total(self) -> float:
        return float(self.fractions.sum())

    @property
    def fiber_fraction(self) -> float:
        return float(self.aniso_fractions.sum())

    @property
    def cell_fraction(self) -> float:
        return float(self.iso_fractions[self.grid.iso_D_grid <= self.d_cell_cut].sum())

    @property
    def free_fraction(self) -> float:
        return 1.0 - self.fiber_fraction - self.cell_fraction - float(self.eaec_removed.sum())

    @property
    def rss(self) -> float:
        r = self.signal - self.design.matrix @ self.fractions
        return float(r @ r)

    @property
    def s_an(self) -> np.ndarray:
        return split_anisotropic(self.signal, self)

    def summary(self) -> dict:
        return {
            "fiber_fraction": self.fiber_fraction,
            "cell_fraction": self.cell_fraction,
            "free_fraction": self.free_fraction,
            "eaec_deducted": float(self.eaec_removed.sum()),
            "lambda_perp_um2_per_ms": self.lambda_perp,
            "rss": self.rss,
            "beta": self.beta,
            "total_mass": self.total,
        }


def _signal_array(signal):
    s = getattr(signal, "s", signal)
    return np.asarray(s, dtype=float)


def fit_spectrum(signal, scheme, grid: BasisGrid, beta=DEFAULT_BETA,
                 d_cell_cut=DEFAULT_D_CELL_CUT) -> SpectrumFit:
    """NNLS + L2 fit for every lambda_perp in the sweep; keep the best.

    The winner has the smallest unregularised residual; exact ties go to
    the smaller lambda_perp.
    """
    s = _signal_array(signal)
    b, _ = _bvals_dirs(scheme)
    if s.shape != b.shape:
        raise SpectrumError(f"dimension mismatch: signal {s.shape}, scheme {b.shape}")
    fits = []
    for lperp in grid.lambda_perp_sweep:
        dm = build_design_matrix(scheme, grid, lperp)
        fits.append((dm, nnls_l2(dm.matrix, s, beta)))
    residuals = np.array([r.residual for _, r in fits])
    best = 0
    for k in range(1, len(fits)):
        if residuals[k] < residuals[best]:
            best = k
    dm, res = fits[best]
    return SpectrumFit(
        fractions=res.x.copy(),
        grid=grid,
        lambda_perp=float(grid.lambda_perp_sweep[best]),
        residuals=residuals,
        design=dm,
        signal=s.copy(),
        beta=float(beta),
        d_cell_cut=float(d_cell_cut),
        solver=res,
    )


def split_anisotropic(signal, fit: SpectrumFit, tolerance=NEGATIVE_CLAMP) -> np.ndarray:
    """s_an = s - sum_j f_j p_kj (fitted isotropic reconstruction removed).

    Negatives down to ``-tolerance`` are clamped to 0; anything lower means
    the isotropic part over-subtracts and raises.
    """
    s = _signal_array(signal)
    s_an = s - fit.design.iso @ fit.iso_fractions
    if s_an.min(initial=0.0) < -tolerance:
        raise SpectrumError(
            f"isotropic over-subtraction: anisotropic signal reaches {s_an.min():.3g}"
        )
    return np.maximum(s_an, 0.0)


def deduct_eaec_anisotropy(fit: SpectrumFit, fraction=DEFAULT_EAEC_DEDUCTION) -> SpectrumFit:
    """Remove ``fraction`` of the anisotropic mass from the top of the lambda_par spectrum.

    Mass is taken bin by bin from the highest axial diffusivity downward.
    The removed amounts are kept in ``eaec_removed`` so the anisotropic
    signal can be corrected for them.
    """
    if not 0.0 <= fraction <= 1.0:
        raise SpectrumError("deduction fraction must lie in [0, 1]")
    if fraction == 0.0:
        return fit
    an = fit.aniso_fractions.copy()
    mass = an.sum()
    target = fraction * mass
    if not mass > 0:
        raise SpectrumError("anisotropic mass is smaller than the deduction amount")
    removed = np.zeros_like(an)
    left = target
    for i in range(an.size - 1, -1, -1):
        take = min(an[i], left)
        removed[i] = take
        an[i] -= take
        left -= take
        if left <= 1e-15 * mass:
            break
    if left > 1e-12 * mass:
        raise SpectrumError("anisotropic mass is smaller than the deduction amount")
    f = fit.fractions.copy()
    f[: fit.grid.n1] = an
    return replace(fit, fractions=f, eaec_removed=fit.eaec_removed + removed)


def anisotropic_signal(fit: SpectrumFit, normalize=True, tolerance=NEGATIVE_CLAMP) -> np.ndarray:
    """Anisotropic signal after the isotropic split and EAEC deduction.

    With ``normalize`` the result is divided by the remaining anisotropic
    mass, so a pure single-tensor input becomes its unit forward curve.
    """
    s_an = split_anisotropic(fit.signal, fit, tolerance)
    s_an = s_an - fit.design.aniso @ fit.eaec_removed
    if normalize:
        mass = fit.fiber_fraction
        if not mass > 0:
            raise SpectrumError("no anisotropic mass left to normalise")
        s_an = s_an / mass
    return s_an


def direction_spectrum(signal, scheme, axis, grid: BasisGrid, beta=DEFAULT_BETA):
    """Per-direction ADC spectrum: NNLS of the rows along ``axis`` on e^{-b D}.

    Returns ``(D_grid, fractions)``. This is the single-direction reduced
    model in which the anisotropic tensor decays with one effective ADC.
    """
    s = _signal_array(signal)
    b, d = _bvals_dirs(scheme)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    rows = (np.abs(d @ axis) > 1.0 - 1e-9) | (b == 0)
    P = np.exp(-b[rows, None] * grid.iso_D_grid[None, :])
    res = nnls_l2(P, s[rows], beta)
    return grid.iso_D_grid.copy(), res.x


def write_spectrum_csv(path, fit: SpectrumFit):
    """One row per basis column: type, diffusivity in both unit systems, fraction."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["type", "diffusivity_um2_per_ms", "diffusivity_mm2_per_s", "fraction"])
        for lab, vals, fr in (("aniso", fit.grid.lambda_par_grid, fit.aniso_fractions),
                              ("iso", fit.grid.iso_D_grid, fit.iso_fractions)):
            for v, f in zip(vals, fr):
                w.writerow([lab, f"{v:.6g}", f"{v * DIFF_UM2_MS_TO_MM2_S:.6g}", f"{f:.17g}"])


def read_spectrum_csv(path):
    """Return ``{"aniso": (D, f), "iso": (D, f)}`` with D in um^2/ms."""
    out = {"aniso": ([], []), "iso": ([], [])}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            D, f = out[row["type"]]
            D.append(float(row["diffusivity_um2_per_ms"]))
            f.append(float(row["fraction"]))
    return {k: (np.array(v[0]), np.array(v[1])) for k, v in out.items()}
