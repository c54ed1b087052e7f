import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dbsirads import geometry as geo
from dbsirads import sequence as sq
from dbsirads import walker as wk


def test_zero_gradient_zero_b():
    assert sq.b_value(0.0, 6.0, 18.0) == 0.0


def test_b_round_trip():
    G = sq.gradient_for_b(1.0, 6.0, 18.0)
    assert sq.b_value(G, 6.0, 18.0) == pytest.approx(1.0, abs=1e-12)


@given(b=st.floats(0.0, 10.0), delta=st.floats(0.5, 20.0), extra=st.floats(0.0, 40.0))
def test_b_round_trip_property(b, delta, extra):
    G = sq.gradient_for_b(b, delta, delta + extra)
    assert sq.b_value(G, delta, delta + extra) == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_doubling_gradient_quadruples_b():
    G = sq.gradient_for_b(0.7, 6.0, 18.0)
    assert sq.b_value(2 * G, 6.0, 18.0) == pytest.approx(4 * 0.7, rel=1e-12)


def test_invalid_timing_and_direction():
    with pytest.raises(ValueError):
        sq.b_value(1e-5, 6.0, 5.0)
    with pytest.raises(ValueError):
        sq.PgseAcquisition((0, 0, 0), 1e-5)
    with pytest.raises(ValueError):
        sq.PgseAcquisition((1, 0, 0), -1.0)
    with pytest.raises(ValueError):
        sq.GradientScheme([sq.PgseAcquisition((1, 0, 0), 1e-6)])
    with pytest.raises(ValueError):
        sq.GradientScheme([])


def test_default_scheme_counts():
    s = sq.default_scheme()
    assert len(s) == 76
    assert s.bvals[s.b0_index] == 0.0
    assert np.allclose(np.linalg.norm(s.directions, axis=1), 1.0)
    assert s.echo_span == pytest.approx(24.0)
    assert s.bvals.max() == pytest.approx(3.0)


def test_empty_b_list_and_parallel_case():
    assert len(sq.make_scheme(["x"], [])) == 1
    s = sq.make_scheme(["z"], [1.0])
    cos_t = s.directions[1] @ np.array([0.0, 0.0, 1.0])
    assert math.acos(min(cos_t, 1.0)) == 0.0


def _walk_phase(traj, t_s, scheme):
    ph = np.zeros((traj.shape[0], len(scheme)))
    for step in range(traj.shape[1] - 1):
        sq.accumulate_phase(ph, traj[:, step], step, t_s, scheme)
    return ph


def test_stationary_spin_zero_phase():
    sch = sq.make_scheme(["x", "y"], [1.0, 2.0])
    t_s = 0.005
    n = int(round(sch.echo_span / t_s))
    traj = np.broadcast_to(np.array([3.7, -2.0, 11.0]), (1, n + 1, 3)).copy()
    assert np.allclose(_walk_phase(traj, t_s, sch), 0.0, atol=1e-9)


def test_jump_between_pulses_gives_gamma_g_delta_d():
    sch = sq.make_scheme(["x"], [1.0])
    a = sch[1]
    t_s, d = 0.005, 0.8
    n = int(round(sch.echo_span / t_s))
    traj = np.zeros((1, n + 1, 3))
    jump = int(round(12.0 / t_s))  # between the pulses
    traj[0, jump:, 0] = d
    ph = _walk_phase(traj, t_s, sch)[0, 1]
    # plus sign on the first pulse, minus on the second
    assert ph == pytest.approx(-sq.GAMMA * a.G * a.delta * d, rel=1e-9)


def test_perpendicular_displacement_zero_phase():
    sch = sq.make_scheme(["z"], [2.0])
    t_s = 0.005
    n = int(round(sch.echo_span / t_s))
    traj = np.zeros((1, n + 1, 3))
    traj[0, :, 0] = np.linspace(0, 5, n + 1)
    traj[0, :, 1] = np.sin(np.linspace(0, 9, n + 1))
    assert np.allclose(_walk_phase(traj, t_s, sch), 0.0, atol=1e-12)


def test_kernel_moments_match_stepwise_phase():
    # two independent phase routes over the same free-water paths
    g = geo.build_voxel(200.0)
    sch = sq.make_scheme(["x", "y", "z", (1, 1, 0)], [0.3, 1.0], delta=1.0, Delta=2.0)
    cfg = wk.WalkConfig(n_spins=300, seed=8)
    e = wk.simulate(g, cfg, sch)
    ids = np.arange(e.n_spins)
    traj = wk.record_trajectories(g, cfg, e.n_steps_done, ids)
    inside = np.all((traj > 1.0) & (traj < 199.0), axis=(1, 2))
    assert inside.sum() > 250
    step = _walk_phase(traj[inside], cfg.timestep, sch)
    mom = e.phase_accumulators(sch)[inside]
    assert np.allclose(mom, step, rtol=1e-9, atol=1e-9)


def test_all_zero_phases_signal_one():
    sch = sq.make_scheme(["x"], [1.0, 2.0])
    e = wk.init_spins(geo.build_voxel(50.0), wk.WalkConfig(n_spins=100, seed=1))
    e.moments = np.zeros((100, 1, 3))
    e.group = np.zeros(len(sch), dtype=np.int64)
    s = sq.synthesize_signal(e, sch)
    assert np.allclose(s.s, 1.0) and np.allclose(s.s_real, 1.0)


def test_signal_bounds_and_direction_equivariance():
    g = geo.build_voxel(100.0)
    sch = sq.make_scheme(["x", "y", "z"], [0.5, 1.5], delta=1.0, Delta=2.0)
    e = wk.simulate(g, wk.WalkConfig(n_spins=20_000, seed=4), sch)
    s = sq.synthesize_signal(e, sch)
    assert s.s[sch.b0_index] == 1.0
    assert np.all(s.s >= 0) and np.all(s.s <= 1 + 3 / math.sqrt(s.n_spins))
    # swapping x and y labels of the displacement swaps the x and y signals
    e2 = wk.SpinEnsemble(**{**e.__dict__})
    e2.moments = e.moments[:, :, [1, 0, 2]]
    s2 = sq.synthesize_signal(e2, sch)
    assert np.allclose(s2.s[1:3], s.s[3:5]) and np.allclose(s2.s[3:5], s.s[1:3])


def test_zero_spin_selection_errors():
    g = geo.build_voxel(20.0)
    sch = sq.make_scheme(["x"], [1.0], delta=1.0, Delta=2.0)
    e = wk.simulate(g, wk.WalkConfig(n_spins=50, seed=1), sch)
    with pytest.raises(ValueError, match="zero spins"):
        sq.synthesize_signal(e, sch, geo.Compartment.IA)


def test_scheme_and_signal_csv_round_trip(tmp_path):
    sch = sq.make_scheme(["x", (0, 1, 1)], [0.25, 2.5], delta=5.0, Delta=20.0)
    sch.to_csv(tmp_path / "scheme.csv")
    back = sq.GradientScheme.from_csv(tmp_path / "scheme.csv")
    assert np.allclose(back.bvals, sch.bvals, rtol=1e-9)
    assert np.allclose(back.directions, sch.directions)
    s = np.linspace(1, 0.1, len(sch))
    sq.write_signal_csv(tmp_path / "s.csv", s, sch.bvals, sch.directions)
    s2, b2, d2 = sq.read_signal_csv(tmp_path / "s.csv")
    assert np.array_equal(s2, s)
    assert np.allclose(b2, sch.bvals, rtol=1e-9)
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert "b_s_per_mm2" in header and "b_ms_per_um2" in header


def test_negated_gradient_keeps_magnitude():
    g = geo.build_voxel(100.0, 1.0, 3.0)
    sch = sq.make_scheme(["x", (-1, 0, 0), (1, 1, 1), (-1, -1, -1)], [0.7], delta=1.0, Delta=2.0)
    e = wk.simulate(g, wk.WalkConfig(n_spins=5000, seed=6), sch)
    s = sq.synthesize_signal(e, sch)
    assert s.s[1] == pytest.approx(s.s[2], rel=1e-12)
    assert s.s[3] == pytest.approx(s.s[4], rel=1e-12)
