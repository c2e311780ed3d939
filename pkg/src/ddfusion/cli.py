"""Command-line front end: run simulations and verification suites.

``ddfusion run CONFIG`` executes a Monte Carlo batch and writes
``nees.csv``, ``mineig.csv``, ``lambda.csv`` (rows ordered run, step,
robot; floats at 17 significant digits) plus a ``manifest.json`` whose
hash every CSV references in its first line.

``ddfusion verify`` runs the desk-scale oracle suites and prints one
pass/fail line per suite.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import StructuralError
from .scenario import ScenarioConfig, paper_scenario
from .tracking import (
    MonteCarloResult,
    monte_carlo,
    nees_bounds,
    run_simulation,
)

CSV_COLUMNS = {
    "nees.csv": ("run", "step", "robot", "nees"),
    "mineig.csv": ("run", "step", "robot", "mineig"),
    "lambda.csv": ("run", "step", "robot", "lambda_min"),
}


def _write_metric_csv(path, manifest_hash, columns, data):
    """data: array (runs, steps, robots)."""
    runs, steps, robots = data.shape
    with open(path, "w") as fh:
        fh.write(f"# manifest: {manifest_hash}\n")
        fh.write(",".join(columns) + "\n")
        for run in range(runs):
            for step in range(steps):
                for j in range(robots):
                    v = data[run, step, j]
                    fh.write(f"{run},{step + 1},{j + 1},{v:.17g}\n")


def write_outputs(result: MonteCarloResult, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    cfg_hash = result.config.content_hash()
    paths = {}
    for name, data in (("nees.csv", result.nees),
                       ("mineig.csv", result.mineig),
                       ("lambda.csv", result.lam)):
        path = os.path.join(out_dir, name)
        _write_metric_csv(path, cfg_hash, CSV_COLUMNS[name], data)
        paths[name] = path
    manifest = {
        "config_hash": cfg_hash,
        "code_version": __version__,
        "seed": result.config.seed,
        "mc_runs": result.config.mc_runs,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": sorted(paths),
        "aborts": [{"run": r, "step": s, "reason": msg}
                   for r, s, msg in result.aborts],
        "config": result.config.dumps(),
    }
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["manifest.json"] = mpath
    return paths


def cmd_run(args) -> int:
    try:
        config = ScenarioConfig.load(args.config)
    except StructuralError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 2
    overrides = {}
    if args.mc is not None:
        overrides["mc_runs"] = args.mc
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_conservative:
        overrides["conservative_filtering"] = False
    if overrides:
        config = config.replace(**overrides)
    result = monte_carlo(config, parallel=args.parallel)
    paths = write_outputs(result, args.out)
    for name in sorted(paths):
        print(f"wrote {paths[name]}")
    if result.aborts:
        print(f"error: {len(result.aborts)} run(s) aborted on negative "
              f"information; see manifest", file=sys.stderr)
        return 1
    return 0


# -- verification suites ----------------------------------------------


def _suite_homogeneous() -> tuple[bool, str]:
    """All-common chain: every robot must match the centralized filter."""
    config = ScenarioConfig(
        n_robots=3, n_targets=2,
        edges=((1, 2), (2, 3)),
        tasks={1: (1, 2), 2: (1, 2), 3: (1, 2)},
        with_bias=False, exchange_mode="sweep",
        horizon_steps=40, mc_runs=1, seed=11,
    )
    run = run_simulation(config, np.random.SeedSequence(config.seed),
                         record_posteriors=True)
    worst = 0.0
    for post, cent in zip(run.posteriors, run.centralized):
        for rid in post:
            worst = max(worst,
                        float(np.max(np.abs(post[rid][0] - cent[rid][0]))),
                        float(np.max(np.abs(post[rid][1] - cent[rid][1]))))
    return worst <= 1e-8, f"max deviation from centralized = {worst:.3g}"


def _suite_kalman() -> tuple[bool, str]:
    """Single robot must degenerate to an exact information filter."""
    config = ScenarioConfig(
        n_robots=1, n_targets=1, edges=(), tasks={1: (1,)},
        horizon_steps=100, mc_runs=1, seed=3,
    )
    run = run_simulation(config, np.random.SeedSequence(config.seed),
                         record_posteriors=True)
    worst = 0.0
    for post, cent in zip(run.posteriors, run.centralized):
        worst = max(worst,
                    float(np.max(np.abs(post[1][0] - cent[1][0]))),
                    float(np.max(np.abs(post[1][1] - cent[1][1]))))
    lam_ok = bool(np.all(run.lam == 1.0))
    ok = worst <= 1e-8 and lam_ok
    return ok, f"max deviation = {worst:.3g}, lambda_min all 1: {lam_ok}"


def _suite_deflation() -> tuple[bool, str]:
    """Paper scenario at desk scale: per-step PSD guarantee and no
    negative-information events."""
    config = paper_scenario(mc_runs=3, horizon_steps=40, seed=5)
    result = monte_carlo(config)
    if result.aborts:
        return False, f"{len(result.aborts)} negative-information abort(s)"
    lam = result.lam
    ok = bool(np.all((lam > 0.0) & (lam <= 1.0)))
    return ok, f"lambda_min range [{np.min(lam):.4f}, {np.max(lam):.4f}]"


SUITES = {
    "homogeneous": _suite_homogeneous,
    "kalman": _suite_kalman,
    "deflation": _suite_deflation,
}


def cmd_verify(args) -> int:
    names = [args.suite] if args.suite else sorted(SUITES)
    failed = 0
    for name in names:
        if name not in SUITES:
            print(f"error: unknown suite {name!r}; choices: {sorted(SUITES)}",
                  file=sys.stderr)
            return 2
        ok, detail = SUITES[name]()
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: {detail}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ddfusion",
        description="Conservative decentralized data fusion simulator",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo batch from a config")
    run.add_argument("config", help="scenario config (TOML)")
    run.add_argument("--mc", type=int, default=None, help="override mc_runs")
    run.add_argument("--seed", type=int, default=None, help="override seed")
    run.add_argument("--no-conservative", action="store_true",
                     help="disable the conservative filtering step")
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--parallel", type=int, default=os.cpu_count() or 1,
                     help="number of worker processes")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="run the oracle/property suites")
    verify.add_argument("--suite", default=None,
                        help=f"run a single suite ({', '.join(sorted(SUITES))})")
    verify.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
