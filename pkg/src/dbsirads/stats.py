"""Summary statistics for replicate experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st


class StatsError(ValueError):
    pass


def pearson_r(x, y):
    """Sample correlation and its two-sided p-value (t with n - 2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("x and y must be 1-D and of equal length")
    n = x.size
    if n < 3:
        raise StatsError("pearson_r needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("zero variance in x or y")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * _st.t.sf(abs(t), n - 2)
    return r, float(p)


@dataclass
class TTest:
    mean: float
    ci95: tuple
    p: float
    t: float
    sd: float
    n: int
    zero_variance: bool = False


def one_sample_t(values, mu0=0.0) -> TTest:
    """Two-sided one-sample t-test; CI half-width t_{0.975, n-1} sd / sqrt(n).

    With zero sample variance the CI collapses to the mean and p is 1 when
    the mean equals mu0 (0 otherwise); ``zero_variance`` flags the case.
    """
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n < 2:
        raise StatsError("one_sample_t needs at least 2 values")
    m = float(v.mean())
    sd = float(v.std(ddof=1))
    half = float(_st.t.ppf(0.975, n - 1)) * sd / math.sqrt(n)
    if sd == 0.0:
        p = 1.0 if m == mu0 else 0.0
        return TTest(m, (m, m), p, 0.0 if m == mu0 else math.inf, 0.0, n, True)
    t = (m - mu0) / (sd / math.sqrt(n))
    p = float(2.0 * _st.t.sf(abs(t), n - 1))
    return TTest(m, (m - half, m + half), p, float(t), sd, n)


def rmse(pred, true) -> float:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(true, dtype=float)
    if p.shape != t.shape:
        raise StatsError("length mismatch")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class StatsReport:
    """Per-replicate metrics with mean / CI summaries and optional agreement stats."""

    per_replicate: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)
    agreement: dict = field(default_factory=dict)

    def add_metric(self, name, values, mu0=None):
        vals = [float(v) for v in values]
        self.per_replicate[name] = vals
        entry = {"mean": float(np.mean(vals)), "n": len(vals)}
        if len(vals) >= 2:
            tt = one_sample_t(vals, 0.0 if mu0 is None else mu0)
            entry.update(sd=tt.sd, ci95=list(tt.ci95))
            if mu0 is not None:
                entry.update(mu0=mu0, t=tt.t, p=tt.p)
        self.summaries[name] = entry

    def add_agreement(self, name, pred, true):
        entry = {"rmse": rmse(pred, true), "pred": list(map(float, pred)),
                 "true": list(map(float, true))}
        try:
            r, p = pearson_r(true, pred)
            entry.update(pearson_r=r, p_value=p)
        except StatsError as exc:
            entry.update(pearson_r=None, p_value=None, note=str(exc))
        self.agreement[name] = entry

    def to_dict(self) -> dict:
        return {"per_replicate": self.per_replicate, "summaries": self.summaries,
                "agreement": self.agreement}
