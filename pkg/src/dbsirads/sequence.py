"""Pulsed-gradient spin-echo acquisitions, phase accrual and signal synthesis.

Internal units: ms, um, T. b-values are in ms/um^2 (1 ms/um^2 = 1000
s/mm^2); gradient amplitudes are stored in T/um.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# proton gyromagnetic ratio, rad / (ms T)
GAMMA = 2.6752218744e5

B_MS_PER_UM2_TO_S_PER_MM2 = 1000.0

DEFAULT_DELTA = 6.0
DEFAULT_BIG_DELTA = 18.0
DEFAULT_N_B = 25
DEFAULT_B_MAX = 3.0

AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


def b_value(G, delta, Delta):
    """Stejskal-Tanner b = gamma^2 G^2 delta^2 (Delta - delta/3), in ms/um^2."""
    if not Delta >= delta > 0:
        raise ValueError("PGSE timing requires Delta >= delta > 0")
    return GAMMA**2 * G**2 * delta**2 * (Delta - delta / 3.0)


def gradient_for_b(b, delta, Delta):
    """Gradient amplitude (T/um) that yields ``b`` for the given timing."""
    if b < 0:
        raise ValueError("b must be non-negative")
    if not Delta >= delta > 0:
        raise ValueError("PGSE timing requires Delta >= delta > 0")
    return math.sqrt(b / (delta**2 * (Delta - delta / 3.0))) / GAMMA


@dataclass(frozen=True)
class PgseAcquisition:
    direction: tuple
    G: float
    delta: float = DEFAULT_DELTA
    Delta: float = DEFAULT_BIG_DELTA

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(v)
        if not n > 0:
            raise ValueError("invalid direction: zero vector")
        object.__setattr__(self, "direction", tuple(float(c) for c in v / n))
        if not self.Delta >= self.delta > 0:
            raise ValueError("PGSE timing requires Delta >= delta > 0")
        if self.G < 0:
            raise ValueError("gradient amplitude must be non-negative")

    @property
    def b(self):
        return b_value(self.G, self.delta, self.Delta)

    @property
    def q(self):
        """gamma * G, rad / (ms um)."""
        return GAMMA * self.G

    # pulse edges, with the first pulse starting at t = 0
    @property
    def t1(self):
        return 0.0

    @property
    def t2(self):
        return self.delta

    @property
    def t3(self):
        return self.Delta

    @property
    def t4(self):
        return self.Delta + self.delta


class GradientScheme:
    """Ordered PGSE acquisitions; must contain at least one b = 0 entry."""

    def __init__(self, acquisitions):
        self.acquisitions = list(acquisitions)
        if not self.acquisitions:
            raise ValueError("gradient scheme is empty")
        if not any(a.G == 0 for a in self.acquisitions):
            raise ValueError("gradient scheme needs a b = 0 acquisition")

    def __len__(self):
        return len(self.acquisitions)

    def __iter__(self):
        return iter(self.acquisitions)

    def __getitem__(self, k):
        return self.acquisitions[k]

    @property
    def bvals(self) -> np.ndarray:
        return np.array([a.b for a in self.acquisitions])

    @property
    def directions(self) -> np.ndarray:
        return np.array([a.direction for a in self.acquisitions])

    @property
    def q(self) -> np.ndarray:
        return np.array([a.q for a in self.acquisitions])

    @property
    def echo_span(self) -> float:
        return max(a.t4 for a in self.acquisitions)

    @property
    def b0_index(self) -> int:
        return next(k for k, a in enumerate(self.acquisitions) if a.G == 0)

    def timing_groups(self):
        """Distinct (delta, Delta) pairs and each acquisition's group index."""
        keys = []
        group = np.empty(len(self), dtype=np.int64)
        for k, a in enumerate(self.acquisitions):
            key = (a.delta, a.Delta)
            if key not in keys:
                keys.append(key)
            group[k] = keys.index(key)
        return keys, group

    def step_windows(self, t_s):
        """Step-index ranges [s1, e1, s3, e3) of both pulses per timing group."""
        keys, group = self.timing_groups()
        windows = np.empty((len(keys), 4), dtype=np.int64)
        for g, (delta, Delta) in enumerate(keys):
            for col, t in enumerate((0.0, delta, Delta, Delta + delta)):
                n = t / t_s
                if abs(n - round(n)) > 1e-6:
                    raise ValueError(
                        f"duration mismatch: pulse edge {t} ms is not a multiple "
                        f"of the {t_s} ms timestep"
                    )
                windows[g, col] = int(round(n))
        return windows, group

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dir_x", "dir_y", "dir_z", "b_s_per_mm2", "delta_ms", "Delta_ms"])
            for a in self.acquisitions:
                w.writerow([*(f"{c:.17g}" for c in a.direction),
                            f"{a.b * B_MS_PER_UM2_TO_S_PER_MM2:.17g}",
                            f"{a.delta:.17g}", f"{a.Delta:.17g}"])

    @classmethod
    def from_csv(cls, path):
        acqs = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                b = float(row["b_s_per_mm2"]) / B_MS_PER_UM2_TO_S_PER_MM2
                delta = float(row["delta_ms"])
                Delta = float(row["Delta_ms"])
                direction = (float(row["dir_x"]), float(row["dir_y"]), float(row["dir_z"]))
                if b == 0 and not any(direction):
                    direction = AXES["z"]
                acqs.append(PgseAcquisition(direction, gradient_for_b(b, delta, Delta), delta, Delta))
        return cls(acqs)


def make_scheme(directions, b_list, delta=DEFAULT_DELTA, Delta=DEFAULT_BIG_DELTA):
    """b = 0 followed by every direction x b-value pair (direction-major).

    ``directions`` may mix vectors and axis names ``"x"``, ``"y"``, ``"z"``.
    """
    dirs = [AXES[d] if isinstance(d, str) else d for d in directions]
    b_list = [float(b) for b in b_list]
    if any(b < 0 for b in b_list):
        raise ValueError("b-values must be non-negative")
    acqs = [PgseAcquisition(AXES["z"], 0.0, delta, Delta)]
    for d in dirs:
        for b in b_list:
            acqs.append(PgseAcquisition(d, gradient_for_b(b, delta, Delta), delta, Delta))
    return GradientScheme(acqs)


def default_scheme():
    """x, y, z with 25 evenly spaced b in [0, 3] ms/um^2; delta 6, Delta 18 ms."""
    return make_scheme("xyz", np.linspace(0.0, DEFAULT_B_MAX, DEFAULT_N_B))


def accumulate_phase(phases, positions, step, t_s, scheme):
    """Add one timestep of phase to ``phases`` (n_spins, n_acq) in place.

    ``positions`` are the spins at time ``step * t_s``. During the first
    pulse each acquisition gains ``+q (g . x) t_s``, during the second
    ``-q (g . x) t_s``; elsewhere nothing. The static-field term cancels
    between the pulses and is omitted.
    """
    t0 = step * t_s
    proj = positions @ scheme.directions.T  # (n_spins, n_acq)
    for k, a in enumerate(scheme):
        if a.t1 <= t0 + 1e-9 * t_s and t0 + 1e-9 * t_s < a.t2:
            phases[:, k] += a.q * proj[:, k] * t_s
        elif a.t3 <= t0 + 1e-9 * t_s and t0 + 1e-9 * t_s < a.t4:
            phases[:, k] -= a.q * proj[:, k] * t_s
    return phases


def phases_from_moments(moments, scheme, group=None):
    """Per-acquisition phases from per-timing-group gradient moments.

    ``moments`` has shape (n_spins, n_groups, 3); the phase for acquisition
    ``k`` is ``q_k * g_k . moments[:, group_k]``.
    """
    if group is None:
        _, group = scheme.timing_groups()
    dirs = scheme.directions
    return scheme.q[None, :] * np.einsum("ngk,gk->ng", moments[:, group, :], dirs)


@dataclass
class SignalVector:
    """Normalised signal per acquisition plus diagnostics."""

    s: np.ndarray
    s_real: np.ndarray
    complex_mean: np.ndarray
    n_spins: int
    bvals: np.ndarray
    directions: np.ndarray

    def __len__(self):
        return len(self.s)

    def to_csv(self, path):
        write_signal_csv(path, self.s, self.bvals, self.directions, self.s_real)


def synthesize_signal(ensemble, scheme, compartment=None, chunk=65536):
    """Ensemble signal ``|mean exp(-i phi)|`` normalised by the b = 0 entry.

    ``compartment`` restricts the average to spins that started in it.
    The real-part estimator is reported alongside as ``s_real``.
    """
    sel = ensemble.selection(compartment)
    n = int(sel.sum()) if sel is not None else ensemble.n_spins
    if n == 0:
        raise ValueError("zero spins in signal average")
    windows_group = ensemble.group
    moments = ensemble.moments if sel is None else ensemble.moments[sel]
    re = np.zeros(len(scheme))
    im = np.zeros(len(scheme))
    for lo in range(0, moments.shape[0], chunk):
        phi = phases_from_moments(moments[lo:lo + chunk], scheme, windows_group)
        re += np.cos(phi).sum(axis=0)
        im -= np.sin(phi).sum(axis=0)
    mean = (re + 1j * im) / n
    k0 = scheme.b0_index
    s = np.abs(mean) / abs(mean[k0])
    s_real = mean.real / mean[k0].real
    s[k0] = 1.0
    s_real[k0] = 1.0
    return SignalVector(s, s_real, mean, n, scheme.bvals, scheme.directions)


def write_signal_csv(path, s, bvals, directions, s_real=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "b_s_per_mm2", "b_ms_per_um2", "dir_x", "dir_y", "dir_z",
                    "s_normalized", "s_real_normalized"])
        for k, (b, d) in enumerate(zip(bvals, directions)):
            sr = s[k] if s_real is None else s_real[k]
            w.writerow([k, f"{b * B_MS_PER_UM2_TO_S_PER_MM2:.10g}", f"{b:.10g}",
                        *(f"{c:.10g}" for c in d), f"{s[k]:.17g}", f"{sr:.17g}"])


def read_signal_csv(path):
    """Return (s, bvals [ms/um^2], directions) from a signal CSV."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    s = np.array([float(r["s_normalized"]) for r in rows])
    b = np.array([float(r["b_ms_per_um2"]) for r in rows])
    d = np.array([[float(r["dir_x"]), float(r["dir_y"]), float(r["dir_z"])] for r in rows])
    return s, b, d
