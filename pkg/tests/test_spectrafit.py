import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dbsirads import sequence as sq
from dbsirads import spectrafit as sf
from dbsirads.acceptance import stage1_mixture

SCHEME = sq.default_scheme()
GRID = sf.default_grid()
B = SCHEME.bvals


def rows(axis, b=None):
    m = np.abs(SCHEME.directions @ np.asarray(sq.AXES[axis])) > 1 - 1e-9
    m &= B > 0
    if b is not None:
        m &= np.isclose(B, b)
    return np.flatnonzero(m)


def mixture(f_fib=0.35, f_cell=0.05, lpar=2.0, lperp=0.0, d_cell=0.2, d_free=3.0):
    c2 = sf.cos2_theta(SCHEME, GRID.fiber_direction)
    an = sf.aniso_curves(B, c2, [lpar], lperp)[:, 0]
    return f_fib * an + f_cell * np.exp(-B * d_cell) + (1 - f_fib - f_cell) * np.exp(-B * d_free)


def test_grid_invariants():
    assert GRID.n1 == 31 and GRID.n2 == 31
    assert GRID.lambda_par_grid[GRID.healthy_index] == 2.0
    assert GRID.iso_D_grid[0] == 0.0 and GRID.iso_D_grid[-1] == 3.0
    with pytest.raises(sf.SpectrumError):
        sf.BasisGrid(np.array([0.0, 1.0, 3.0]), GRID.iso_D_grid, GRID.lambda_perp_sweep)
    with pytest.raises(sf.SpectrumError):
        sf.BasisGrid(GRID.lambda_par_grid, np.array([0.5, 3.0]), GRID.lambda_perp_sweep)
    with pytest.raises(sf.SpectrumError):
        sf.BasisGrid(GRID.lambda_par_grid, GRID.iso_D_grid, np.array([0.0, 0.5]))
    with pytest.raises(sf.SpectrumError):
        sf.BasisGrid(GRID.lambda_par_grid[::-1], GRID.iso_D_grid, GRID.lambda_perp_sweep)


def test_design_matrix_entries():
    dm = sf.build_design_matrix(SCHEME, GRID, 0.0)
    M = dm.matrix
    assert np.all(M[SCHEME.b0_index] == 1.0)
    assert np.all((M > 0) & (M <= 1.0))
    k = rows("z", 1.0)
    assert M[k, GRID.healthy_index] == pytest.approx(math.exp(-2.0), rel=1e-12)
    kx = rows("x", 1.0)
    assert np.allclose(M[kx, :GRID.n1], 1.0)
    assert np.allclose(dm.iso[k], np.exp(-GRID.iso_D_grid))
    dm2 = sf.build_design_matrix(SCHEME, GRID, 0.3)
    assert np.allclose(dm2.aniso[kx], math.exp(-0.3))


def test_synthetic_mixture_default_beta():
    fit = sf.fit_spectrum(mixture(), SCHEME, GRID)
    assert fit.lambda_perp == 0.0
    assert abs(fit.fiber_fraction - 0.35) <= 0.01
    assert abs(fit.cell_fraction - 0.05) <= 0.01
    assert abs(fit.free_fraction - 0.60) <= 0.01
    assert fit.total <= 1.0 + 1e-3


def test_pure_isotropic_signal():
    for D in (0.5, 1.0, 2.3, 3.0):
        fit = sf.fit_spectrum(np.exp(-B * D), SCHEME, GRID, beta=0.0)
        j = int(np.argmin(np.abs(GRID.iso_D_grid - D)))
        assert fit.iso_fractions[j] == pytest.approx(1.0, abs=1e-6)
        assert fit.aniso_fractions.sum() < 1e-3
        assert np.allclose(sf.split_anisotropic(np.exp(-B * D), fit), 0.0, atol=1e-6)


def test_lambda_perp_is_re_evaluated():
    fit = sf.fit_spectrum(mixture(lperp=0.2, d_cell=0.5), SCHEME, GRID, beta=0.0)
    assert fit.lambda_perp == pytest.approx(0.2)
    assert fit.fiber_fraction == pytest.approx(0.35, abs=1e-6)
    assert fit.residuals.size == GRID.lambda_perp_sweep.size
    assert fit.residuals.min() == fit.residuals[np.argmin(np.abs(GRID.lambda_perp_sweep - 0.2))]


@given(seed=st.integers(0, 2**32 - 1))
def test_forward_round_trip_property(seed):
    lp, x = stage1_mixture(np.random.default_rng(seed), GRID)
    s = sf.build_design_matrix(SCHEME, GRID, lp).matrix @ x
    fit = sf.fit_spectrum(s, SCHEME, GRID, beta=0.0)
    assert fit.lambda_perp == lp
    assert np.abs(fit.fractions - x).max() <= 1e-6
    assert fit.rss <= 1e-10


def test_noise_sensitivity():
    s0 = mixture()
    base = sf.fit_spectrum(s0, SCHEME, GRID)
    rng = np.random.default_rng(12)
    shifts = []
    for _ in range(5):
        s = s0 + rng.normal(scale=1e-3, size=s0.size)
        s[SCHEME.b0_index] = 1.0
        shifts.append(abs(sf.fit_spectrum(s, SCHEME, GRID).fiber_fraction - base.fiber_fraction))
    assert max(shifts) <= 0.01


def test_split_with_no_isotropic_mass_is_identity():
    c2 = sf.cos2_theta(SCHEME, GRID.fiber_direction)
    s = sf.aniso_curves(B, c2, [2.0], 0.0)[:, 0]
    fit = sf.fit_spectrum(s, SCHEME, GRID, beta=0.0)
    assert fit.iso_fractions.sum() < 1e-9
    assert np.allclose(sf.split_anisotropic(s, fit), s, atol=1e-9)
    # a pure single tensor normalises to its unit forward curve
    assert np.allclose(sf.anisotropic_signal(fit), s, atol=1e-6)


def test_split_matches_forward_anisotropic_curve():
    fit = sf.fit_spectrum(mixture(), SCHEME, GRID)
    c2 = sf.cos2_theta(SCHEME, GRID.fiber_direction)
    want = 0.35 * sf.aniso_curves(B, c2, [2.0], 0.0)[:, 0]
    got = sf.split_anisotropic(mixture(), fit)
    assert math.sqrt(np.mean((got - want) ** 2)) <= 1e-3


def test_over_subtraction_raises_and_small_negatives_clamp():
    s = np.exp(-B * 1.0)
    fit = sf.fit_spectrum(s, SCHEME, GRID, beta=0.0)
    bent = s.copy()
    bent[rows("x", 3.0)] -= 0.01
    with pytest.raises(sf.SpectrumError, match="over-subtraction"):
        sf.split_anisotropic(bent, fit)
    bent = s.copy()
    bent[rows("x", 3.0)] -= 5e-4
    assert sf.split_anisotropic(bent, fit).min() == 0.0
    assert sf.split_anisotropic(s - 0.02, fit, tolerance=0.05).min() == 0.0


def test_deduction_exact_top_bin():
    f = np.zeros(GRID.n1 + GRID.n2)
    f[GRID.healthy_index] = 0.96
    f[GRID.n1 - 1] = 0.04
    fit = sf.fit_spectrum(mixture(), SCHEME, GRID)
    fit = sf.SpectrumFit(f, GRID, 0.0, fit.residuals, fit.design, fit.signal, fit.beta)
    d = sf.deduct_eaec_anisotropy(fit, 0.04)
    assert d.aniso_fractions[-1] == pytest.approx(0.0, abs=1e-15)
    assert d.aniso_fractions[GRID.healthy_index] == 0.96
    assert d.eaec_removed.sum() == pytest.approx(0.04)
    assert d.free_fraction == pytest.approx(fit.free_fraction)
    # remaining mass renormalises to the unit healthy curve
    c2 = sf.cos2_theta(SCHEME, GRID.fiber_direction)
    s = 0.96 * sf.aniso_curves(B, c2, [2.0], 0.0)[:, 0] + 0.04 * sf.aniso_curves(B, c2, [3.0], 0.0)[:, 0]
    fit2 = sf.SpectrumFit(f, GRID, 0.0, fit.residuals, fit.design, s, fit.beta)
    got = sf.anisotropic_signal(sf.deduct_eaec_anisotropy(fit2, 0.04))
    assert np.allclose(got, sf.aniso_curves(B, c2, [2.0], 0.0)[:, 0], atol=1e-12)


def test_deduction_spans_bins_and_zero_is_identity():
    fit = sf.fit_spectrum(mixture(), SCHEME, GRID)
    assert sf.deduct_eaec_anisotropy(fit, 0.0) is fit
    f = np.zeros(GRID.n1 + GRID.n2)
    f[[20, 29, 30]] = [0.5, 0.3, 0.2]
    fit = sf.SpectrumFit(f, GRID, 0.0, fit.residuals, fit.design, fit.signal, fit.beta)
    d = sf.deduct_eaec_anisotropy(fit, 0.3)
    assert d.aniso_fractions[30] == 0.0
    assert d.aniso_fractions[29] == pytest.approx(0.2)
    assert d.aniso_fractions[20] == 0.5
    with pytest.raises(sf.SpectrumError):
        sf.deduct_eaec_anisotropy(fit, 1.5)


def test_direction_spectrum_plateau():
    D, fr = sf.direction_spectrum(mixture(f_cell=0.0), SCHEME, (1, 0, 0), GRID, beta=0.0)
    assert fr[D == 0.0][0] == pytest.approx(0.35, abs=1e-6)
    assert fr[D == 3.0][0] == pytest.approx(0.65, abs=1e-6)


def test_dimension_mismatch():
    with pytest.raises(sf.SpectrumError, match="dimension mismatch"):
        sf.fit_spectrum(np.ones(5), SCHEME, GRID)


def test_spectrum_csv_round_trip(tmp_path):
    fit = sf.fit_spectrum(mixture(), SCHEME, GRID)
    sf.write_spectrum_csv(tmp_path / "sp.csv", fit)
    back = sf.read_spectrum_csv(tmp_path / "sp.csv")
    assert np.array_equal(back["aniso"][1], fit.aniso_fractions)
    assert np.allclose(back["iso"][0], GRID.iso_D_grid)
    head = (tmp_path / "sp.csv").read_text().splitlines()[0]
    assert head == "type,diffusivity_um2_per_ms,diffusivity_mm2_per_s,fraction"
