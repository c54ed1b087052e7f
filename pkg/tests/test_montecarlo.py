"""Monte-Carlo examples at 1e5 spins (about two minutes per ensemble)."""

import math

import numpy as np
import pytest

from dbsirads import geometry as geo
from dbsirads import sequence as sq
from dbsirads import spectrafit as sf
from dbsirads import walker as wk
from dbsirads.config import GEOMETRY_PRESETS
from dbsirads.geometry import Compartment

N = 100_000
SCHEME = sq.default_scheme()
pytestmark = pytest.mark.slow


def at(sig, axis, b):
    k = np.flatnonzero((np.abs(SCHEME.directions @ np.asarray(sq.AXES[axis])) > 1 - 1e-9)
                       & np.isclose(SCHEME.bvals, b))
    return float(sig.s[k[0]])


@pytest.fixture(scope="module")
def free_water():
    g = geo.from_config(GEOMETRY_PRESETS["free-only"])
    e = wk.simulate(g, wk.WalkConfig(n_spins=N, seed=101), SCHEME)
    return g, e, sq.synthesize_signal(e, SCHEME)


@pytest.fixture(scope="module")
def fibers():
    g = geo.from_config(GEOMETRY_PRESETS["fiber-only"])
    e = wk.simulate(g, wk.WalkConfig(n_spins=N, seed=102), SCHEME)
    return g, e, sq.synthesize_signal(e, SCHEME)


def test_free_water_einstein(free_water):
    _, e, _ = free_water
    assert e.elapsed == pytest.approx(24.0)
    dt = wk.displacement_tensor(e, e.elapsed)
    assert np.allclose(dt.per_axis, 3.0, rtol=0.03)
    assert np.allclose(dt.axis_eigenvalues, 3.0, rtol=0.03)
    # <R R^T>/(6 tau) puts D/3 on each eigenvalue
    assert np.allclose(dt.eigenvalues, 1.0, rtol=0.03)
    assert dt.mean_diffusivity == pytest.approx(1.0, rel=0.03)


def test_free_water_signal_b1(free_water):
    _, _, sig = free_water
    for axis in "xyz":
        assert abs(at(sig, axis, 1.0) - math.exp(-3.0)) <= 0.005


def test_free_water_spectrum_is_isotropic(free_water):
    _, _, sig = free_water
    fit = sf.fit_spectrum(sig.s, SCHEME, sf.default_grid())
    assert fit.iso_fractions.sum() / fit.total >= 0.98


def test_fiber_z_signal_b1(fibers):
    _, _, sig = fibers
    ia = sq.synthesize_signal(fibers[1], SCHEME, Compartment.IA)
    assert abs(at(ia, "z", 1.0) - math.exp(-2.0)) <= 0.01
    assert at(ia, "x", 3.0) > 0.95


def test_fiber_radial_restriction(fibers):
    _, e, _ = fibers
    dt = wk.displacement_tensor(e, e.elapsed, Compartment.IA)
    assert dt.per_axis[0] < 0.05 and dt.per_axis[1] < 0.05
    assert dt.per_axis[2] == pytest.approx(2.0, rel=0.03)
    assert np.allclose(np.abs(dt.eigenvectors[:, 0]), [0, 0, 1], atol=1e-2)


def test_fiber_confinement_full_run(fibers):
    g, e, _ = fibers
    assert np.all((e.positions >= 0) & (e.positions <= g.side))
    assert np.array_equal(geo.classify_points(e.positions, g), e.compartment_at_start)
    ia = e.compartment_at_start == Compartment.IA
    centers = g.fiber_centers()[e.owner[ia]]
    r = np.hypot(e.positions[ia, 0] - centers[:, 0], e.positions[ia, 1] - centers[:, 1])
    assert r.max() <= g.fiber_radius


def test_fiber_x_asymptote(fibers):
    g, _, sig = fibers
    f = geo.volume_fractions(g)["f_fiber"]
    assert abs(at(sig, "x", 3.0) - f) <= 0.02


def test_square_lattice_xy_equivariance(fibers):
    # the fiber lattice maps onto itself under x <-> y, so the x and y decays agree
    _, e, sig = fibers
    for b in (0.5, 1.5, 3.0):
        assert abs(at(sig, "x", b) - at(sig, "y", b)) <= 4 / math.sqrt(e.n_spins)
