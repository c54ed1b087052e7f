"""Stage-2 two-component anisotropic fit for axonal health.

The anisotropic signal is modelled as ``f * diseased + (1 - f) * healthy``
where the healthy tensor has a fixed axial diffusivity (2.0 um^2/ms) and
both tensors have zero radial diffusivity. Every other axial grid value
is tried as the diseased diffusivity; the candidate with the lowest BIC
wins.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .spectrafit import (DIFF_UM2_MS_TO_MM2_S, HEALTHY_LAMBDA_PAR, BasisGrid,
                         _bvals_dirs, aniso_curves, cos2_theta)

BIC_K = 2
RSS_FLOOR = 1e-30


class RadsError(ValueError):
    pass


@dataclass(frozen=True)
class RadsCandidate:
    lambda_par_diseased: float
    f: float
    rss: float
    bic: float


@dataclass
class RadsResult:
    chosen: RadsCandidate
    trace: list
    lambda_par_healthy: float = HEALTHY_LAMBDA_PAR
    n_acquisitions: int = 0

    @property
    def fraction_diseased(self) -> float:
        return self.chosen.f

    @property
    def fraction_healthy(self) -> float:
        return 1.0 - self.chosen.f

    @property
    def lambda_par_diseased(self) -> float:
        return self.chosen.lambda_par_diseased

    @property
    def average_axial_ADC(self) -> float:
        f = self.chosen.f
        return f * self.chosen.lambda_par_diseased + (1.0 - f) * self.lambda_par_healthy

    def report(self) -> dict:
        return {
            "fraction_healthy": self.fraction_healthy,
            "fraction_diseased": self.fraction_diseased,
            "lambda_par_diseased_um2_per_ms": self.lambda_par_diseased,
            "lambda_par_diseased_mm2_per_s": self.lambda_par_diseased * DIFF_UM2_MS_TO_MM2_S,
            "lambda_par_healthy_um2_per_ms": self.lambda_par_healthy,
            "average_axial_ADC_um2_per_ms": self.average_axial_ADC,
            "average_axial_ADC_mm2_per_s": self.average_axial_ADC * DIFF_UM2_MS_TO_MM2_S,
            "rss": self.chosen.rss,
            "bic": self.chosen.bic,
            "bic_k": BIC_K,
            "n_acquisitions": self.n_acquisitions,
        }


def rads_design(scheme, lambda_candidate, grid: BasisGrid) -> np.ndarray:
    """N x 2 basis: diseased candidate curve, then the healthy curve (lambda_perp = 0)."""
    lp = grid.lambda_par_grid
    hit = np.flatnonzero(lp == lambda_candidate)
    if hit.size == 0:
        raise RadsError(f"off-grid candidate: {lambda_candidate}")
    if hit[0] == grid.healthy_index:
        raise RadsError("candidate coincides with the healthy diffusivity")
    b, _ = _bvals_dirs(scheme)
    c2 = cos2_theta(scheme, grid.fiber_direction)
    return aniso_curves(b, c2, [lp[hit[0]], HEALTHY_LAMBDA_PAR], 0.0)


def fit_candidate(s_an, basis):
    """Best f in [0, 1] for s_an ~ f * basis[:, 0] + (1 - f) * basis[:, 1].

    Closed form: f* = d.r / d.d with d = candidate - healthy and
    r = s_an - healthy, clamped to [0, 1].
    """
    s_an = np.asarray(s_an, dtype=float)
    h = basis[:, 1]
    d = basis[:, 0] - h
    r = s_an - h
    dd = float(d @ d)
    f = 0.0 if dd == 0.0 else float(d @ r) / dd
    f = min(max(f, 0.0), 1.0)
    e = r - f * d
    return f, float(e @ e)


def bic(rss, N, k=BIC_K):
    """Gaussian least-squares BIC: N ln(rss / N) + k ln N, rss floored at 1e-30."""
    if N <= 0:
        raise RadsError("N must be positive")
    return N * math.log(max(rss, RSS_FLOOR) / N) + k * math.log(N)


def fit_rads(s_an, scheme, grid: BasisGrid) -> RadsResult:
    """Scan every non-healthy axial grid value; pick the lowest BIC (ties: lower lambda)."""
    s_an = np.asarray(s_an, dtype=float)
    b, _ = _bvals_dirs(scheme)
    if s_an.shape != b.shape:
        raise RadsError(f"dimension mismatch: s_an {s_an.shape}, scheme {b.shape}")
    N = b.size
    trace = []
    for i, lam in enumerate(grid.lambda_par_grid):
        if i == grid.healthy_index:
            continue
        f, rss = fit_candidate(s_an, rads_design(scheme, lam, grid))
        trace.append(RadsCandidate(float(lam), f, rss, bic(rss, N)))
    best = trace[0]
    for c in trace[1:]:
        if c.bic < best.bic:
            best = c
    return RadsResult(best, trace, HEALTHY_LAMBDA_PAR, N)


def write_bic_trace_csv(path, result: RadsResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda_par_diseased_um2_per_ms", "lambda_par_diseased_mm2_per_s",
                    "f_diseased", "rss", "bic"])
        for c in result.trace:
            w.writerow([f"{c.lambda_par_diseased:.6g}",
                        f"{c.lambda_par_diseased * DIFF_UM2_MS_TO_MM2_S:.6g}",
                        f"{c.f:.17g}", f"{c.rss:.17g}", f"{c.bic:.17g}"])


def write_report(path, result: RadsResult):
    with open(path, "w") as fh:
        json.dump(result.report(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def candidate_dict(c: RadsCandidate) -> dict:
    return asdict(c)
