"""Experiment configuration: YAML files, profiles and environment overrides.

Precedence, lowest first: built-in defaults, the experiment's geometry
preset, the profile named in the file, the file itself, environment
variables, then command-line flags.

Environment overrides use the ``DBSIRADS_`` prefix; a double underscore
separates a block from its key, e.g. ``DBSIRADS_WALK__N_SPINS=20000`` or
``DBSIRADS_REPLICATES=1``. Values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

ENV_PREFIX = "DBSIRADS_"

EXPERIMENTS = ("free-only", "fiber-only", "cell-only", "full-structure", "axonal-health")

PROFILES = {
    "desk": {"replicates": 3, "walk": {"n_spins": 100_000}},
    "paper": {"replicates": 10, "walk": {"n_spins": 1_000_000}},
}

_FIBERS = {"side_um": 100.0, "fiber_radius_um": 1.0, "fiber_pitch_um": 3.0}

GEOMETRY_PRESETS = {
    "free-only": {"side_um": 100.0},
    "fiber-only": dict(_FIBERS),
    # 5 % net cell volume is out of reach for a lattice without fibers, so
    # the cell-only voxel reuses the full-structure sphere pitch
    "cell-only": {"side_um": 100.0, "cell_radius_um": 5.3, "cell_pitch_um": 21.0},
    "full-structure": {**_FIBERS, "cell_radius_um": 5.3, "cell_fraction_target": 0.05},
    "axonal-health": {**_FIBERS, "cell_radius_um": 5.3, "cell_fraction_target": 0.05},
}

RADS_DEFAULT_ON = {"fiber-only", "full-structure", "axonal-health"}

DEFAULTS = {
    "experiment": "full-structure",
    "replicates": 3,
    "seed": 1,
    "output_dir": "results",
    "profile": None,
    "geometry": None,
    "walk": {
        "n_spins": 100_000,
        "timestep_us": 5.0,
        "D_IA": 2.0,
        "D_ICEA": 3.0,
        "D_EAEC": 3.0,
    },
    "scheme": {
        "file": None,
        "directions": ["x", "y", "z"],
        "n_b": 25,
        "b_max_ms_per_um2": 3.0,
        "delta_ms": 6.0,
        "Delta_ms": 18.0,
    },
    "fit": {
        "n1": 31,
        "n2": 31,
        "lambda_perp_max": 0.4,
        "n_perp": 9,
        "beta": 1e-4,
        "eaec_deduction": 0.04,
        "d_cell_cut": 1.5,
        "negative_tolerance": "auto",
    },
    "rads": {
        "enabled": None,
        "health_fractions": [1.0, 0.7, 0.5, 0.3],
        "D_healthy": 2.0,
        "D_diseased": 1.0,
    },
    "trajectories": {"enabled": False, "n_spins": 10, "n_steps": 2000},
}


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    over: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        # diffusivity keys keep their upper-case compartment suffix
        path = [_restore_case(p) for p in path]
        node = over
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = yaml.safe_load(raw)
    return over


def _restore_case(key):
    for k in ("D_IA", "D_ICEA", "D_EAEC", "Delta_ms"):
        if key == k.lower():
            return k
    return key


@dataclass
class ExperimentConfig:
    experiment: str
    replicates: int
    seed: int
    output_dir: str
    geometry: dict
    walk: dict
    scheme: dict
    fit: dict
    rads: dict
    trajectories: dict
    profile: str = None

    @property
    def rads_enabled(self) -> bool:
        on = self.rads.get("enabled")
        return self.experiment in RADS_DEFAULT_ON if on is None else bool(on)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "replicates": self.replicates,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "profile": self.profile,
            "geometry": self.geometry,
            "walk": self.walk,
            "scheme": self.scheme,
            "fit": self.fit,
            "rads": self.rads,
            "trajectories": self.trajectories,
        }

    def dump(self, path):
        # the output location is left out so reruns elsewhere stay byte-identical
        d = self.to_dict()
        d.pop("output_dir")
        with open(path, "w") as fh:
            yaml.safe_dump(d, fh, sort_keys=True)


def _validate(d: dict) -> ExperimentConfig:
    if d["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {d['experiment']!r}; choose from {EXPERIMENTS}")
    try:
        reps = int(d["replicates"])
        seed = int(d["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"replicates and seed must be integers: {exc}") from None
    if reps < 1:
        raise ConfigError("replicate count must be >= 1")
    for block in ("walk", "scheme", "fit", "rads", "trajectories"):
        if not isinstance(d.get(block), dict):
            raise ConfigError(f"block {block!r} must be a mapping")
    if int(d["walk"]["n_spins"]) < 1:
        raise ConfigError("walk.n_spins must be >= 1")
    return ExperimentConfig(
        experiment=d["experiment"],
        replicates=reps,
        seed=seed,
        output_dir=str(d["output_dir"]),
        geometry=dict(d["geometry"]),
        walk=dict(d["walk"]),
        scheme=dict(d["scheme"]),
        fit=dict(d["fit"]),
        rads=dict(d["rads"]),
        trajectories=dict(d["trajectories"]),
        profile=d.get("profile"),
    )


def load_config(path=None, profile=None, seed=None, output_dir=None,
                environ=None, overrides=None) -> ExperimentConfig:
    """Resolve a full experiment configuration.

    ``profile``, ``seed`` and ``output_dir`` are command-line values and
    win over everything else; ``overrides`` is a dict merged just below
    them (used by tests and the acceptance suite).
    """
    user: dict = {}
    if path is not None:
        with open(Path(path)) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping at top level")
    env = env_overrides(environ)
    top = deep_merge(deep_merge(user, env), overrides or {})

    experiment = top.get("experiment", DEFAULTS["experiment"])
    d = copy.deepcopy(DEFAULTS)
    d["geometry"] = copy.deepcopy(GEOMETRY_PRESETS.get(experiment, {}))
    file_profile = top.get("profile")
    if file_profile:
        if file_profile not in PROFILES:
            raise ConfigError(f"unknown profile {file_profile!r}")
        d = deep_merge(d, PROFILES[file_profile])
    if "geometry" in top and top["geometry"] is not None:
        # a geometry block replaces the preset rather than merging into it
        d["geometry"] = {}
    d = deep_merge(d, top)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        d = deep_merge(d, PROFILES[profile])
        d["profile"] = profile
    if seed is not None:
        d["seed"] = int(seed)
    if output_dir is not None:
        d["output_dir"] = str(output_dir)
    return _validate(d)
