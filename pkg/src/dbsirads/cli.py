"""Command-line entry point: simulate, fit, run, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from . import __version__
from .config import EXPERIMENTS, PROFILES, load_config

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _common(p):
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (replicate r uses seed + r)")
    p.add_argument("--profile", choices=sorted(PROFILES), help="desk or paper scale")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="override the experiment name")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="dbsirads", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="geometry + walk + signal synthesis")
    _common(p)
    p = sub.add_parser("fit", help="signal CSV -> spectrum + RADS")
    _common(p)
    p.add_argument("signal", type=Path, help="signal CSV written by simulate/run")
    p = sub.add_parser("run", help="full pipeline with statistics")
    _common(p)
    p = sub.add_parser("validate", help="built-in acceptance suite")
    _common(p)
    p.add_argument("--only", nargs="*", type=int, help="criterion numbers to run")
    return ap


def _error_record(out, exc, command):
    rec = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(rec), file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            with open(Path(out) / "error.json", "w") as fh:
                json.dump(rec, fh, indent=2)
                fh.write("\n")
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = args.out
    try:
        overrides = {"experiment": args.experiment} if args.experiment else None
        cfg = load_config(args.config, profile=args.profile, seed=args.seed,
                          output_dir=args.out, overrides=overrides)
        out = Path(cfg.output_dir)
        if args.command == "simulate":
            from .experiments import simulate_only

            reps = simulate_only(cfg)
            print(f"wrote {len(reps)} signal file(s) under {out}")
        elif args.command == "fit":
            from .experiments import fit_signal_file

            _, rres, m = fit_signal_file(args.signal, cfg)
            print(json.dumps({k: m[k] for k in ("fiber_fraction", "cell_fraction",
                                                "free_fraction", "lambda_perp")}))
            if rres is not None:
                print(json.dumps(rres.report()))
        elif args.command == "run":
            from .experiments import run_experiment

            res = run_experiment(cfg)
            print(json.dumps(res.stats.summaries, indent=1, sort_keys=True))
        elif args.command == "validate":
            from .acceptance import run_suite

            results = run_suite(cfg, out, only=args.only)
            return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        if args.verbose:
            traceback.print_exc()
        _error_record(out, exc, args.command)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
