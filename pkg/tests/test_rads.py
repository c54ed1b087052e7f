import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dbsirads import rads as rd
from dbsirads import sequence as sq
from dbsirads import spectrafit as sf
from dbsirads.acceptance import RADS_SWEEP_F, rads_sweep_lambdas

SCHEME = sq.default_scheme()
GRID = sf.default_grid()
B = SCHEME.bvals


def test_design_entries():
    M = rd.rads_design(SCHEME, 1.0, GRID)
    assert M.shape == (76, 2)
    assert np.all(M[SCHEME.b0_index] == 1.0)
    k = np.flatnonzero((SCHEME.directions[:, 2] > 0.999) & np.isclose(B, 1.0))[0]
    assert M[k, 0] == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert M[k, 1] == pytest.approx(math.exp(-2.0), rel=1e-12)
    x = np.abs(SCHEME.directions[:, 0]) > 0.999
    assert np.all(M[x] == 1.0)


def test_design_errors():
    with pytest.raises(rd.RadsError, match="off-grid"):
        rd.rads_design(SCHEME, 1.05, GRID)
    with pytest.raises(rd.RadsError, match="healthy"):
        rd.rads_design(SCHEME, 2.0, GRID)
    with pytest.raises(rd.RadsError, match="dimension mismatch"):
        rd.fit_rads(np.ones(3), SCHEME, GRID)


def test_fit_candidate_examples():
    M = rd.rads_design(SCHEME, 1.0, GRID)
    assert rd.fit_candidate(M[:, 1], M) == (0.0, 0.0)
    f, rss = rd.fit_candidate(M[:, 0], M)
    assert f == pytest.approx(1.0, abs=1e-12) and rss < 1e-25
    f, _ = rd.fit_candidate(0.5 * M[:, 0] + 0.5 * M[:, 1], M)
    assert f == pytest.approx(0.5, abs=1e-9)


def test_bic_formula():
    assert rd.bic(1e-4, 76) == pytest.approx(76 * math.log(1e-4 / 76) + 2 * math.log(76), rel=1e-14)
    assert rd.bic(1e-3, 76) > rd.bic(1e-4, 76)
    assert rd.bic(3e-4, 76) - rd.bic(1e-4, 76) == pytest.approx(76 * math.log(3.0))
    with pytest.raises(rd.RadsError):
        rd.bic(1.0, 0)


@given(rss=st.floats(1e-12, 10.0), c=st.floats(1.0001, 1e3), n=st.integers(3, 500))
def test_bic_scaling_property(rss, c, n):
    assert rd.bic(c * rss, n) - rd.bic(rss, n) == pytest.approx(n * math.log(c), rel=1e-9, abs=1e-9)


def test_noiseless_half_mix():
    M = rd.rads_design(SCHEME, 1.0, GRID)
    r = rd.fit_rads(0.5 * M[:, 0] + 0.5 * M[:, 1], SCHEME, GRID)
    assert r.lambda_par_diseased == 1.0
    assert r.fraction_diseased == pytest.approx(0.5, abs=1e-6)
    assert r.fraction_healthy + r.fraction_diseased == 1.0
    assert r.chosen.bic == min(c.bic for c in r.trace)
    assert len(r.trace) == GRID.n1 - 1
    assert r.average_axial_ADC == pytest.approx(1.5)


def test_purely_healthy():
    M = rd.rads_design(SCHEME, 1.0, GRID)
    r = rd.fit_rads(M[:, 1], SCHEME, GRID)
    assert r.fraction_healthy == pytest.approx(1.0)
    # every candidate ties at f = 0; ties go to the lowest axial value
    assert r.lambda_par_diseased == GRID.lambda_par_grid[0]


def test_sweep_argmin_exact():
    lams = rads_sweep_lambdas(GRID)
    assert len(lams) == 10 and 2.0 not in lams
    for lam in lams:
        M = rd.rads_design(SCHEME, float(lam), GRID)
        for f in RADS_SWEEP_F:
            r = rd.fit_rads(f * M[:, 0] + (1 - f) * M[:, 1], SCHEME, GRID)
            assert r.lambda_par_diseased == lam
            assert r.fraction_diseased == pytest.approx(f, abs=1e-6)


def test_outputs(tmp_path):
    M = rd.rads_design(SCHEME, 0.8, GRID)
    r = rd.fit_rads(0.3 * M[:, 0] + 0.7 * M[:, 1], SCHEME, GRID)
    rd.write_report(tmp_path / "r.json", r)
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["fraction_healthy"] == pytest.approx(0.7)
    assert rep["lambda_par_diseased_mm2_per_s"] == pytest.approx(0.8e-3)
    rd.write_bic_trace_csv(tmp_path / "b.csv", r)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert len(lines) == GRID.n1
    assert lines[0].startswith("lambda_par_diseased_um2_per_ms")
    assert rd.candidate_dict(r.chosen)["f"] == pytest.approx(0.3)


def test_oracle_equivalence_all_candidates():
    # f = 0 is excluded: with no diseased mass every candidate fits equally well
    for i, lam in enumerate(GRID.lambda_par_grid):
        if i == GRID.healthy_index:
            continue
        M = rd.rads_design(SCHEME, float(lam), GRID)
        for f in RADS_SWEEP_F:
            r = rd.fit_rads(f * M[:, 0] + (1 - f) * M[:, 1], SCHEME, GRID)
            assert r.lambda_par_diseased == lam
            assert abs(r.fraction_diseased - f) <= 1e-6


@given(c=st.floats(0.05, 20.0), f=st.floats(0.05, 0.95), i=st.integers(0, 29))
def test_argmin_stable_under_scaling(c, f, i):
    lam = float(np.delete(GRID.lambda_par_grid, GRID.healthy_index)[i])
    M = rd.rads_design(SCHEME, lam, GRID)
    rng = np.random.default_rng(i)
    s = f * M[:, 0] + (1 - f) * M[:, 1] + rng.normal(scale=1e-3, size=len(B))
    a = rd.fit_rads(s, SCHEME, GRID)
    # scaling signal and basis together: refit every candidate on c * s vs c * M
    best = None
    for lam_k in GRID.lambda_par_grid:
        if lam_k == 2.0:
            continue
        fk, rss = rd.fit_candidate(c * s, c * rd.rads_design(SCHEME, float(lam_k), GRID))
        b = rd.bic(rss, len(B))
        if best is None or b < best[0]:
            best = (b, lam_k, fk)
    assert best[1] == a.lambda_par_diseased
    assert best[2] == pytest.approx(a.fraction_diseased, abs=1e-9)
