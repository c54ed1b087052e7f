"""Built-in acceptance suite: one pass/fail line per criterion.

Criteria 1-5 run Monte-Carlo experiments at the scale of the supplied
configuration (desk scale unless ``profile: paper`` is selected); 6-8 are
exact property checks that finish in seconds.
"""

from __future__ import annotations

import copy
import filecmp
import itertools
import logging
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import experiments as ex
from . import geometry as geo
from . import nnls
from . import rads as rd
from . import report as rp
from . import sequence as sq
from . import spectrafit as sf
from .config import GEOMETRY_PRESETS, ExperimentConfig, deep_merge
from .stats import StatsError, pearson_r, rmse

log = logging.getLogger("dbsirads")

D_FREE = 3.0
REL_TOL_EINSTEIN = 0.03
FIBER_SIGNAL_BAND = (0.33, 0.37)
LOW_MASS_SHARE = 0.93
DESK_FIBER_BAND = (0.32, 0.38)
DESK_CELL_BAND = (0.035, 0.07)
# reported confidence intervals widened by one percentage point
PAPER_FIBER_BAND = (0.3410 - 0.01, 0.355 + 0.01)
PAPER_CELL_BAND = (0.0498 - 0.01, 0.0575 + 0.01)
SIGMA_EAEC = 3.0
MIN_R = 0.95
DESK_RMSE = 0.05
PAPER_RMSE = 0.03
LAMBDA_REL_ERR = 0.10
NNLS_OBJ_TOL = 1e-8
ROUND_TRIP_TOL = 1e-6

CRITERIA = {
    1: "einstein-calibration",
    2: "fiber-asymptote",
    3: "full-structure-fractions",
    4: "eaec-anisotropy",
    5: "rads-health",
    6: "nnls-oracle",
    7: "noiseless-round-trips",
    8: "determinism",
}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        brief = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items()
                          if not isinstance(v, (list, dict)))
        return f"{tag} [{self.number}] {self.name}: {brief}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def is_paper_scale(cfg: ExperimentConfig) -> bool:
    return int(cfg.walk["n_spins"]) >= 1_000_000 and cfg.replicates >= 10


def derive(cfg: ExperimentConfig, experiment, replicates=None) -> ExperimentConfig:
    """Same walk, scheme and fit settings on another experiment's voxel."""
    return replace(copy.deepcopy(cfg), experiment=experiment,
                   geometry=copy.deepcopy(GEOMETRY_PRESETS[experiment]),
                   replicates=cfg.replicates if replicates is None else int(replicates))


class _Runs:
    """Experiments shared between criteria are run once."""

    def __init__(self, cfg, out):
        self.cfg, self.out, self._cache = cfg, Path(out), {}

    def get(self, experiment, replicates=None, keep=False):
        key = (experiment, replicates)
        if key not in self._cache:
            c = derive(self.cfg, experiment, replicates)
            self._cache[key] = ex.run_experiment(c, self.out / experiment, keep_ensembles=keep)
        return self._cache[key]


def _axis_rows(scheme, axis):
    return np.abs(scheme.directions @ np.asarray(sq.AXES[axis])) > 1.0 - 1e-9


# ---- Monte-Carlo criteria -------------------------------------------------

def criterion_1(runs: _Runs) -> CriterionResult:
    res = runs.get("free-only", 1)
    m = res.replicates[0].metrics
    d = {f"disp_{a}": m[f"disp_adc_{a}"] for a in "xyz"}
    d.update({f"slope_{a}": m[f"signal_adc_{a}"] for a in "xyz"})
    ok = all(abs(v - D_FREE) <= REL_TOL_EINSTEIN * D_FREE for v in d.values())
    return CriterionResult(1, CRITERIA[1], ok, d)


def criterion_2(runs: _Runs) -> CriterionResult:
    res = runs.get("fiber-only", 1)
    rep = res.replicates[0]
    scheme = ex.scheme_from_config(res.config.scheme)
    rows = _axis_rows(scheme, "x") & np.isclose(scheme.bvals, 3.0)
    s_b3 = float(np.mean(np.asarray(rep.signal.s)[rows])) if rows.any() else float("nan")
    fit, m = rep.fit, rep.metrics
    lowest = float(fit.grid.lambda_perp_sweep[0])
    share_x = m["low_adc_mass_x"] / m["fiber_fraction"] if m["fiber_fraction"] > 0 else 0.0
    share_y = m["low_adc_mass_y"] / m["fiber_fraction"] if m["fiber_fraction"] > 0 else 0.0
    ok_sig = FIBER_SIGNAL_BAND[0] <= s_b3 <= FIBER_SIGNAL_BAND[1]
    ok_perp = fit.lambda_perp == lowest
    ok_share = min(share_x, share_y) >= LOW_MASS_SHARE
    d = {"x_signal_b3": s_b3, "lambda_perp": fit.lambda_perp, "fiber_fraction": m["fiber_fraction"],
         "low_share_x": share_x, "low_share_y": share_y,
         "signal_ok": ok_sig, "lambda_perp_ok": ok_perp, "low_share_ok": ok_share}
    return CriterionResult(2, CRITERIA[2], ok_sig and ok_perp and ok_share, d)


def criterion_3(runs: _Runs) -> CriterionResult:
    res = runs.get("full-structure", None, keep=True)
    fib = float(np.mean(res.metric("fiber_fraction")))
    cell = float(np.mean(res.metric("cell_fraction")))
    paper = is_paper_scale(res.config)
    fb, cb = (PAPER_FIBER_BAND, PAPER_CELL_BAND) if paper else (DESK_FIBER_BAND, DESK_CELL_BAND)
    ok_f = fb[0] <= fib <= fb[1]
    ok_c = cb[0] <= cell <= cb[1]
    d = {"scale": "paper" if paper else "desk", "replicates": len(res.replicates),
         "fiber_mean": fib, "cell_mean": cell, "fiber_ok": ok_f, "cell_ok": ok_c,
         "fiber_each": res.metric("fiber_fraction"), "cell_each": res.metric("cell_fraction")}
    return CriterionResult(3, CRITERIA[3], ok_f and ok_c, d)


def eaec_axis_contrast(ensembles, tau):
    """Pooled (R_z^2 - R_a^2)/(2 tau) over EAEC spins for a = x, y: mean, se."""
    out = {}
    for name, lo in (("x", 0), ("y", 1)):
        parts = []
        for e in ensembles:
            sel = e.selection(geo.Compartment.EAEC)
            R = e.displacements[sel]
            parts.append((R[:, 2] ** 2 - R[:, lo] ** 2) / (2.0 * tau))
        d = np.concatenate(parts)
        out[name] = (float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)))
    return out


def criterion_4(runs: _Runs) -> CriterionResult:
    res = runs.get("full-structure", None, keep=True)
    ens = [r.ensemble for r in res.replicates]
    c = eaec_axis_contrast(ens, ens[0].elapsed)
    d = {}
    ok = True
    for a, (mu, se) in c.items():
        d[f"z_minus_{a}"] = mu
        d[f"z_minus_{a}_sigmas"] = mu / se if se > 0 else float("inf")
        ok &= mu > SIGMA_EAEC * se
    for a in "xyz":
        d[f"eaec_adc_{a}"] = float(np.mean(res.metric(f"eaec_disp_adc_{a}")))
    return CriterionResult(4, CRITERIA[4], bool(ok), d)


def _safe_r(x, y):
    # a constant prediction has no correlation; report nan, which fails
    try:
        return pearson_r(x, y)[0]
    except StatsError:
        return float("nan")


def criterion_5(runs: _Runs) -> CriterionResult:
    res = runs.get("axonal-health")
    reps = res.replicates
    pred_h = [r.metrics["fraction_healthy"] for r in reps]
    true_h = [r.metrics["true_fraction_healthy"] for r in reps]
    pred_a = [r.metrics["average_axial_ADC"] for r in reps]
    true_a = [r.metrics["true_average_axial_ADC"] for r in reps]
    r_h = _safe_r(true_h, pred_h)
    r_a = _safe_r(true_a, pred_a)
    err = rmse(pred_h, true_h)
    dis = [r for r in reps if r.health_fraction < 1.0]
    lam_err = float(np.mean([abs(r.metrics["lambda_par_diseased"] - r.metrics["true_lambda_par_diseased"])
                             / r.metrics["true_lambda_par_diseased"] for r in dis]))
    paper = is_paper_scale(res.config)
    lim = PAPER_RMSE if paper else DESK_RMSE
    checks = {"r_fraction_ok": r_h >= MIN_R, "rmse_ok": err <= lim,
              "lambda_ok": lam_err <= LAMBDA_REL_ERR, "r_axial_ok": r_a >= MIN_R}
    d = {"r_fraction": r_h, "rmse_fraction": err, "lambda_rel_err": lam_err, "r_axial_adc": r_a,
         **checks, "pred_fraction": pred_h, "true_fraction": true_h,
         "pred_lambda_par_diseased": [r.metrics["lambda_par_diseased"] for r in dis]}
    return CriterionResult(5, CRITERIA[5], all(checks.values()), d)


# ---- exact property criteria ------------------------------------------------

def brute_force_nnls(A, y):
    """Exhaustive active-set enumeration: best objective over feasible supports."""
    n = A.shape[1]
    best = float(y @ y)
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            z = np.linalg.lstsq(A[:, S], y, rcond=None)[0]
            if np.all(z >= 0.0):
                r = y - A[:, S] @ z
                best = min(best, float(r @ r))
    return best


def criterion_6(seed=20240601, n_instances=200) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        A = rng.normal(size=(m, n))
        y = rng.normal(size=m)
        worst = max(worst, abs(nnls.nnls_l2(A, y).objective - brute_force_nnls(A, y)))
    return CriterionResult(6, CRITERIA[6], worst <= NNLS_OBJ_TOL,
                           {"instances": n_instances, "max_objective_gap": worst})


MIN_ISO_SEPARATION = 3  # bins; closer isotropic pairs are not separable to 1e-6


def stage1_mixture(rng, grid: sf.BasisGrid):
    """Random identifiable on-grid mixture: (lambda_perp, fractions).

    One anisotropic column plus one or two isotropic columns at least
    ``MIN_ISO_SEPARATION`` bins apart. Columns that coincide with another
    column for this lambda_perp (lambda_par = lambda_perp, D = lambda_perp)
    are excluded since their split is not identifiable.
    """
    lp = float(grid.lambda_perp_sweep[rng.integers(grid.lambda_perp_sweep.size)])
    ia = int(rng.choice(np.flatnonzero(np.abs(grid.lambda_par_grid - lp) > 1e-9)))
    ok_iso = np.flatnonzero(np.abs(grid.iso_D_grid - lp) > 1e-9)
    k = int(rng.integers(1, 3))
    while True:
        iso = rng.choice(ok_iso, k, replace=False)
        if k == 1 or abs(int(iso[0]) - int(iso[1])) >= MIN_ISO_SEPARATION:
            break
    w = rng.dirichlet(np.ones(1 + k))
    x = np.zeros(grid.n1 + grid.n2)
    x[ia] = w[0]
    x[grid.n1 + iso] = w[1:]
    return lp, x


RADS_SWEEP_F = tuple(round(0.1 * i, 1) for i in range(1, 11))


def rads_sweep_lambdas(grid: sf.BasisGrid, n=10):
    """n on-grid diseased candidates spread over the grid, healthy excluded."""
    cand = np.delete(np.arange(grid.n1), grid.healthy_index)
    pick = np.unique(np.round(np.linspace(0, cand.size - 1, n)).astype(int))
    return grid.lambda_par_grid[cand[pick]]


def criterion_7(cfg: ExperimentConfig, seed=7, n_stage1=100) -> CriterionResult:
    scheme = ex.scheme_from_config(cfg.scheme)
    grid = sf.grid_from_config(cfg.fit)
    rng = np.random.default_rng(seed)
    s1_err, s1_perp_miss = 0.0, 0
    for _ in range(n_stage1):
        lp, x = stage1_mixture(rng, grid)
        s = sf.build_design_matrix(scheme, grid, lp).matrix @ x
        fit = sf.fit_spectrum(s, scheme, grid, beta=0.0)
        if fit.lambda_perp != lp:
            s1_perp_miss += 1
            continue
        s1_err = max(s1_err, float(np.abs(fit.fractions - x).max()))
    f_err, misses, total = 0.0, 0, 0
    for lam in rads_sweep_lambdas(grid):
        basis = rd.rads_design(scheme, float(lam), grid)
        for f in RADS_SWEEP_F:
            s_an = f * basis[:, 0] + (1.0 - f) * basis[:, 1]
            rr = rd.fit_rads(s_an, scheme, grid)
            total += 1
            if rr.lambda_par_diseased != lam:
                misses += 1
                continue
            f_err = max(f_err, abs(rr.fraction_diseased - f))
    ok = (s1_perp_miss == 0 and s1_err <= ROUND_TRIP_TOL and misses == 0 and f_err <= ROUND_TRIP_TOL)
    d = {"stage1_mixtures": n_stage1, "stage1_max_fraction_error": s1_err,
         "stage1_lambda_perp_misses": s1_perp_miss, "rads_sweep": total,
         "rads_argmin_misses": misses, "rads_max_f_error": f_err}
    return CriterionResult(7, CRITERIA[7], ok, d)


DETERMINISM_OVERRIDES = {
    "experiment": "axonal-health",
    "replicates": 1,
    "walk": {"n_spins": 3000},
    "fit": {"negative_tolerance": 1.0},
    "rads": {"health_fractions": [0.5]},
}


def _tree_files(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def _run_cli(config_path, out, threads):
    env = dict(os.environ)
    env["NUMBA_NUM_THREADS"] = str(threads)
    for k in [k for k in env if k.startswith("DBSIRADS_")]:
        del env[k]
    cmd = [sys.executable, "-m", "dbsirads", "run", "--config", str(config_path), "--out", str(out)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True)


def criterion_8(cfg: ExperimentConfig, out: Path, threads=(1, 4, 4)) -> CriterionResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    base = derive(cfg, "axonal-health").to_dict()
    base.pop("output_dir")
    base.pop("profile")
    conf = deep_merge(base, DETERMINISM_OVERRIDES)
    conf["geometry"] = copy.deepcopy(GEOMETRY_PRESETS["axonal-health"])
    path = out / "determinism.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(conf, fh, sort_keys=True)
    dirs = []
    for i, t in enumerate(threads):
        d = out / f"run_{i}_threads_{t}"
        proc = _run_cli(path, d, t)
        if proc.returncode != 0:
            return CriterionResult(8, CRITERIA[8], False,
                                   {"error": f"run {i} exited {proc.returncode}",
                                    "stderr": proc.stderr.strip()[-400:]})
        dirs.append(d)
    ref = _tree_files(dirs[0])
    differing = []
    for d in dirs[1:]:
        files = _tree_files(d)
        if files != ref:
            differing.append(f"{d.name}: file lists differ")
            continue
        differing += [f"{d.name}/{p}" for p in ref
                      if not filecmp.cmp(dirs[0] / p, d / p, shallow=False)]
    kinds = {"signal.csv", "spectrum.csv", "rads_report.json"}
    covered = sorted(k for k in kinds if any(p.name == k for p in ref))
    ok = not differing and len(covered) == len(kinds)
    return CriterionResult(8, CRITERIA[8], ok,
                           {"runs": len(dirs), "threads": list(threads), "files_compared": len(ref),
                            "mismatches": len(differing), "covers": ",".join(covered),
                            "differing": differing[:10]})


# ---- driver -------------------------------------------------------------------

def run_suite(cfg: ExperimentConfig, out, only=None, echo=print) -> list:
    """Run the selected criteria (all by default), print and record results."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    runs = _Runs(cfg, out / "runs")
    todo = sorted(set(only)) if only else sorted(CRITERIA)
    unknown = [n for n in todo if n not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criterion number(s): {unknown}")
    jobs = {
        1: lambda: criterion_1(runs),
        2: lambda: criterion_2(runs),
        3: lambda: criterion_3(runs),
        4: lambda: criterion_4(runs),
        5: lambda: criterion_5(runs),
        6: criterion_6,
        7: lambda: criterion_7(cfg),
        8: lambda: criterion_8(cfg, out / "determinism"),
    }
    results = []
    for n in todo:
        t0 = time.perf_counter()
        r = jobs[n]()
        r.seconds = time.perf_counter() - t0
        results.append(r)
        if echo is not None:
            echo(r.line())
    rp.write_json(out / "acceptance.json", {
        "scale": "paper" if is_paper_scale(cfg) else "desk",
        "n_spins": int(cfg.walk["n_spins"]),
        "replicates": cfg.replicates,
        "criteria": [{"number": r.number, "name": r.name, "passed": r.passed,
                      "seconds": r.seconds, "detail": r.detail} for r in results],
    })
    return results
