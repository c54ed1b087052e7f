"""Named experiment pipelines: geometry, walk, signal, stage-1 and stage-2 fits."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import geometry as geo
from . import rads as rd
from . import report as rp
from . import sequence as sq
from . import spectrafit as sf
from . import walker as wk
from .config import ExperimentConfig
from .stats import StatsReport

log = logging.getLogger("dbsirads")

ADC_B_RANGE = (0.5, 3.0)
LOW_ADC_CUT = 0.2
TOP_BIN_CUT = 2.9


def scheme_from_config(block: dict, base_dir=None) -> sq.GradientScheme:
    if block.get("file"):
        p = Path(block["file"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return sq.GradientScheme.from_csv(p)
    b = np.linspace(0.0, float(block["b_max_ms_per_um2"]), int(block["n_b"]))
    return sq.make_scheme(list(block["directions"]), b, float(block["delta_ms"]),
                          float(block["Delta_ms"]))


def walk_config(cfg: ExperimentConfig, seed, health_fraction=None) -> wk.WalkConfig:
    block = dict(cfg.walk)
    block["seed"] = int(seed)
    block.pop("health_mix", None)
    if health_fraction is not None:
        block["health_mix"] = {
            "fraction_healthy": float(health_fraction),
            "D_healthy": float(cfg.rads["D_healthy"]),
            "D_diseased": float(cfg.rads["D_diseased"]),
        }
    return wk.WalkConfig.from_config(block)


def log_slope(s, bvals, b_range=ADC_B_RANGE):
    """-d ln s / d b through the origin, weighted by s^2.

    ln s has variance ~ sigma^2 / s^2 under additive noise, so s^2 weights
    keep points lost in the Monte-Carlo noise floor from dominating.
    Non-positive samples carry no usable log and are skipped.
    """
    s = np.asarray(s, float)
    b = np.asarray(bvals, float)
    m = (b >= b_range[0] - 1e-12) & (b <= b_range[1] + 1e-12) & (s > 0)
    if not m.any():
        return float("nan")
    y = -np.log(s[m])
    w = s[m] ** 2
    return float((w * b[m] * y).sum() / (w * b[m] ** 2).sum())


def direction_adcs(s, scheme, b_range=ADC_B_RANGE):
    """Per-axis log-slope ADC for the rows along x, y and z."""
    b, d = np.asarray(scheme.bvals), np.asarray(scheme.directions)
    out = {}
    for name, ax in sq.AXES.items():
        rows = np.abs(d @ np.asarray(ax)) > 1.0 - 1e-9
        out[name] = log_slope(np.asarray(s)[rows], b[rows], b_range) if rows.any() else float("nan")
    return out


def axis_adc_difference(e: wk.SpinEnsemble, tau, compartment, hi=2, lo=(0, 1)):
    """Mean and standard error of (R_hi^2 - mean R_lo^2) / (2 tau) over spins."""
    sel = e.selection(compartment)
    R = e.displacements if sel is None else e.displacements[sel]
    d = (R[:, hi] ** 2 - np.mean(R[:, list(lo)] ** 2, axis=1)) / (2.0 * tau)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


@dataclass
class ReplicateResult:
    label: str
    seed: int
    health_fraction: float = None
    metrics: dict = field(default_factory=dict)
    signal: sq.SignalVector = None
    fit: sf.SpectrumFit = None
    rads: rd.RadsResult = None
    ensemble: wk.SpinEnsemble = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    replicates: list
    stats: StatsReport

    def metric(self, name, health_fraction=None):
        return [r.metrics[name] for r in self.replicates
                if health_fraction is None or r.health_fraction == health_fraction]


def conditions(cfg: ExperimentConfig):
    """(label, health_fraction) pairs the experiment iterates over."""
    if cfg.experiment == "axonal-health":
        return [(f"healthy_{int(round(100 * h)):03d}", float(h)) for h in cfg.rads["health_fractions"]]
    return [("", None)]


def negative_tolerance(cfg: ExperimentConfig) -> float:
    """Clamp limit for negative anisotropic signal after isotropic subtraction.

    ``"auto"`` scales with the Monte-Carlo noise of one signal sample,
    three times 1/sqrt(2 n_spins), and never drops below the fixed clamp.
    """
    v = cfg.fit.get("negative_tolerance", "auto")
    if isinstance(v, str) and v.lower() == "auto":
        n = max(int(cfg.walk["n_spins"]), 1)
        return max(sf.NEGATIVE_CLAMP, 3.0 / math.sqrt(2.0 * n))
    return float(v)


def fit_signal(s, scheme, cfg: ExperimentConfig, rads_on=None):
    """Stage-1 fit, EAEC deduction and (optionally) the stage-2 fit."""
    grid = sf.grid_from_config(cfg.fit)
    fit = sf.fit_spectrum(s, scheme, grid, float(cfg.fit["beta"]), float(cfg.fit["d_cell_cut"]))
    rads_on = cfg.rads_enabled if rads_on is None else rads_on
    rres = None
    if rads_on:
        fitd = sf.deduct_eaec_anisotropy(fit, float(cfg.fit["eaec_deduction"]))
        tol = negative_tolerance(cfg)
        rres = rd.fit_rads(sf.anisotropic_signal(fitd, tolerance=tol), scheme, grid)
        return fit, fitd, rres
    return fit, fit, rres


def _fit_metrics(fit, fitd, rres, s, scheme, cfg):
    grid = fit.grid
    an = fit.aniso_fractions
    mass = an.sum()
    m = {
        "fiber_fraction": fit.fiber_fraction,
        "cell_fraction": fit.cell_fraction,
        "free_fraction": fit.free_fraction,
        "lambda_perp": fit.lambda_perp,
        "rss": fit.rss,
        "aniso_top_share": float(an[grid.lambda_par_grid >= TOP_BIN_CUT].sum() / mass) if mass > 0 else 0.0,
        "aniso_mean_lambda_par": float((an * grid.lambda_par_grid).sum() / mass) if mass > 0 else float("nan"),
        "eaec_deducted": float(fitd.eaec_removed.sum()),
    }
    for name, ax in (("x", (1, 0, 0)), ("y", (0, 1, 0))):
        D, fr = sf.direction_spectrum(s, scheme, ax, grid, float(cfg.fit["beta"]))
        m[f"low_adc_mass_{name}"] = float(fr[D <= LOW_ADC_CUT + 1e-12].sum())
        m[f"plateau_{name}"] = float(fr.sum())
    if rres is not None:
        m.update({
            "fraction_healthy": rres.fraction_healthy,
            "fraction_diseased": rres.fraction_diseased,
            "lambda_par_diseased": rres.lambda_par_diseased,
            "average_axial_ADC": rres.average_axial_ADC,
            "rads_rss": rres.chosen.rss,
            "rads_bic": rres.chosen.bic,
        })
    return m


def _write_fit_files(d: Path, s, scheme, fit, rres, cfg):
    sf.write_spectrum_csv(d / "spectrum.csv", fit)
    grid = fit.grid
    rows = []
    for name, ax in (("x", (1, 0, 0)), ("y", (0, 1, 0)), ("z", (0, 0, 1))):
        D, fr = sf.direction_spectrum(s, scheme, ax, grid, float(cfg.fit["beta"]))
        rows += [(name, v, v * sf.DIFF_UM2_MS_TO_MM2_S, f) for v, f in zip(D, fr)]
    rp.write_csv(d / "direction_spectra.csv",
                 ["axis", "adc_um2_per_ms", "adc_mm2_per_s", "fraction"], rows)
    rp.bar_chart(d / "spectrum.svg",
                 [("anisotropic (axial)", grid.lambda_par_grid, fit.aniso_fractions),
                  ("isotropic", grid.iso_D_grid, fit.iso_fractions)],
                 "Signal intensities", "diffusivity (um^2/ms)", "fraction")
    if rres is not None:
        rd.write_report(d / "rads_report.json", rres)
        rd.write_bic_trace_csv(d / "bic_trace.csv", rres)
        rp.line_chart(d / "bic.svg",
                      [("BIC", [c.lambda_par_diseased for c in rres.trace],
                        [c.bic for c in rres.trace])],
                      "BIC over diseased axial diffusivity", "lambda_par (um^2/ms)", "BIC")


def _signal_chart(path, s, scheme):
    b, d = scheme.bvals, scheme.directions
    series = []
    for name, ax in sq.AXES.items():
        rows = np.abs(d @ np.asarray(ax)) > 1.0 - 1e-9
        if rows.any():
            series.append((name, b[rows], np.asarray(s)[rows]))
    if series:
        rp.line_chart(path, series, "Signal decay", "b (ms/um^2)", "normalized signal")


def run_replicate(cfg, g, scheme, seed, out_dir: Path, label="", health_fraction=None,
                  keep_ensemble=False, write_files=True, fit=True) -> ReplicateResult:
    wcfg = walk_config(cfg, seed, health_fraction)
    e = wk.simulate(g, wcfg, scheme)
    sig = sq.synthesize_signal(e, scheme)
    tau = e.elapsed
    m = {"seed": int(seed), "n_spins": e.n_spins, "tau_ms": tau}
    for k, v in e.census().items():
        m[f"census_{k}"] = v
    dt = wk.displacement_tensor(e, tau)
    m.update({f"disp_adc_{a}": float(v) for a, v in zip("xyz", dt.per_axis)})
    m.update({f"signal_adc_{a}": v for a, v in direction_adcs(sig.s, scheme).items()})
    if np.any(e.compartment_at_start == geo.Compartment.EAEC):
        dte = wk.displacement_tensor(e, tau, geo.Compartment.EAEC)
        m.update({f"eaec_disp_adc_{a}": float(v) for a, v in zip("xyz", dte.per_axis)})
        mu, se = axis_adc_difference(e, tau, geo.Compartment.EAEC)
        m["eaec_z_minus_xy"] = mu
        m["eaec_z_minus_xy_se"] = se
        es = sq.synthesize_signal(e, scheme, geo.Compartment.EAEC)
        m.update({f"eaec_signal_adc_{a}": v for a, v in direction_adcs(es.s, scheme).items()})
    counts = e.step_counts.sum(axis=0)
    m.update(steps_free=int(counts[0]), steps_reflected=int(counts[1]), steps_rejected=int(counts[2]))
    if health_fraction is not None:
        labels = wk.fiber_health(g, wcfg.health_mix, wcfg.seed)
        true_h = float(np.mean(labels == wk.HEALTHY)) if labels.size else float("nan")
        m["true_fraction_healthy"] = true_h
        m["true_average_axial_ADC"] = (true_h * float(cfg.rads["D_healthy"])
                                       + (1 - true_h) * float(cfg.rads["D_diseased"]))
        m["true_lambda_par_diseased"] = float(cfg.rads["D_diseased"])

    res = ReplicateResult(label, int(seed), health_fraction, m, sig)
    if fit:
        f, fd, rres = fit_signal(sig.s, scheme, cfg)
        m.update(_fit_metrics(f, fd, rres, sig.s, scheme, cfg))
        res.fit, res.rads = f, rres
    if write_files:
        out_dir.mkdir(parents=True, exist_ok=True)
        sig.to_csv(out_dir / "signal.csv")
        _signal_chart(out_dir / "signal.svg", sig.s, scheme)
        if fit:
            _write_fit_files(out_dir, sig.s, scheme, res.fit, res.rads, cfg)
        rp.write_json(out_dir / "metrics.json", m)
        tr = cfg.trajectories
        if tr.get("enabled"):
            n = min(int(tr.get("n_spins", 10)), wcfg.n_spins)
            ids = np.arange(n)
            traj = wk.record_trajectories(g, wcfg, int(tr.get("n_steps", 2000)), ids)
            wk.write_trajectories(out_dir / "trajectories.bin", traj, ids)
    if keep_ensemble:
        res.ensemble = e
    return res


def _summarize(cfg, reps) -> StatsReport:
    st = StatsReport()
    keys = ["fiber_fraction", "cell_fraction", "free_fraction", "lambda_perp",
            "low_adc_mass_x", "low_adc_mass_y", "aniso_top_share",
            "disp_adc_x", "disp_adc_y", "disp_adc_z",
            "signal_adc_x", "signal_adc_y", "signal_adc_z",
            "eaec_disp_adc_x", "eaec_disp_adc_y", "eaec_disp_adc_z", "eaec_z_minus_xy",
            "fraction_healthy", "lambda_par_diseased", "average_axial_ADC"]
    for label, hf in conditions(cfg):
        group = [r for r in reps if r.label == label]
        prefix = f"{label}/" if label else ""
        for k in keys:
            vals = [r.metrics[k] for r in group if k in r.metrics]
            if vals and all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
                st.add_metric(prefix + k, vals)
    if cfg.experiment == "axonal-health" and cfg.rads_enabled:
        conds = conditions(cfg)
        mean = lambda lab, k: float(np.mean([r.metrics[k] for r in reps if r.label == lab]))
        st.add_agreement("fraction_healthy",
                         [mean(l, "fraction_healthy") for l, _ in conds],
                         [mean(l, "true_fraction_healthy") for l, _ in conds])
        st.add_agreement("average_axial_ADC",
                         [mean(l, "average_axial_ADC") for l, _ in conds],
                         [mean(l, "true_average_axial_ADC") for l, _ in conds])
        dis = [(l, h) for l, h in conds if h < 1.0]
        if dis:
            st.add_agreement("lambda_par_diseased",
                             [mean(l, "lambda_par_diseased") for l, _ in dis],
                             [mean(l, "true_lambda_par_diseased") for l, _ in dis])
    return st


SUMMARY_COLUMNS = [
    ("condition", "condition"), ("replicate", "replicate"), ("seed", "seed"),
    ("fiber_fraction", "fiber_fraction"), ("cell_fraction", "cell_fraction"),
    ("free_fraction", "free_fraction"), ("lambda_perp", "lambda_perp_um2_per_ms"),
    ("fraction_healthy", "fraction_healthy"), ("lambda_par_diseased", "lambda_par_diseased_um2_per_ms"),
    ("average_axial_ADC", "average_axial_ADC_um2_per_ms"),
    ("true_fraction_healthy", "true_fraction_healthy"),
    ("disp_adc_x", "disp_adc_x_um2_per_ms"), ("disp_adc_y", "disp_adc_y_um2_per_ms"),
    ("disp_adc_z", "disp_adc_z_um2_per_ms"),
]


def run_experiment(cfg: ExperimentConfig, out_dir=None, keep_ensembles=False) -> ExperimentResult:
    """Run every condition and replicate, write artifacts, return the stats."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    g = geo.from_config(cfg.geometry)
    scheme = scheme_from_config(cfg.scheme)
    scheme.to_csv(out / "scheme.csv")
    rp.write_json(out / "geometry.json", {
        "geometry": dataclasses.asdict(g),
        "volume_fractions": geo.volume_fractions(g),
    })
    reps = []
    for label, hf in conditions(cfg):
        for r in range(cfg.replicates):
            seed = cfg.seed + r
            d = out / (label or ".") / f"rep_{r:02d}"
            log.info("%s %s replicate %d (seed %d)", cfg.experiment, label, r, seed)
            reps.append(run_replicate(cfg, g, scheme, seed, d, label, hf, keep_ensemble=keep_ensembles))
            reps[-1].metrics["replicate"] = r
    st = _summarize(cfg, reps)
    rp.write_json(out / "stats_summary.json", {"experiment": cfg.experiment, **st.to_dict()})
    rows = []
    for rep in reps:
        row = []
        for key, _ in SUMMARY_COLUMNS:
            if key == "condition":
                row.append(rep.label or cfg.experiment)
            else:
                row.append(rep.metrics.get(key, ""))
        rows.append(row)
    rp.write_csv(out / "summary.csv", [h for _, h in SUMMARY_COLUMNS], rows)
    if "fraction_healthy" in st.agreement:
        a = st.agreement["fraction_healthy"]
        rp.line_chart(out / "health_agreement.svg",
                      [("predicted", a["true"], a["pred"]), ("identity", a["true"], a["true"])],
                      "Healthy axon proportion", "true", "predicted")
    return ExperimentResult(cfg, out, reps, st)


def simulate_only(cfg: ExperimentConfig, out_dir=None) -> list:
    """Geometry, walk and signal synthesis only; writes signal CSVs."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    g = geo.from_config(cfg.geometry)
    scheme = scheme_from_config(cfg.scheme)
    scheme.to_csv(out / "scheme.csv")
    reps = []
    for label, hf in conditions(cfg):
        for r in range(cfg.replicates):
            d = out / (label or ".") / f"rep_{r:02d}"
            reps.append(run_replicate(cfg, g, scheme, cfg.seed + r, d, label, hf, fit=False))
    return reps


def fit_signal_file(path, cfg: ExperimentConfig, out_dir=None):
    """Stage-1 and stage-2 fits of a signal CSV; writes spectrum and RADS files."""
    s, b, dirs = sq.read_signal_csv(path)
    scheme = SimpleNamespace(bvals=b, directions=dirs)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rads_on = cfg.rads.get("enabled")
    rads_on = True if rads_on is None else bool(rads_on)
    fit, fitd, rres = fit_signal(s, scheme, cfg, rads_on)
    _write_fit_files(out, s, scheme, fit, rres, cfg)
    m = _fit_metrics(fit, fitd, rres, s, scheme, cfg)
    rp.write_json(out / "fit_summary.json", m)
    return fit, rres, m
