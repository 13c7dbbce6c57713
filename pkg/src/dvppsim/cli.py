"""Command-line entry point.

Subcommands: run, verify, bode, montecarlo.  The scenario argument is a
file path or an inline preset spec such as "case1" or "case2 epsilon=0.5".
Exit codes: 0 success, 1 verification failure, 2 parse error, 3 simulation
error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .adaptation import adpf_snapshot, snapshot_to_csv
from .errors import DvppError, ParseError, SemanticError
from .metrics import MetricsReport
from .scenario import Scenario, load_scenario

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_PARSE_ERROR = 2
EXIT_SIM_ERROR = 3


def _load(target: str, args) -> Scenario:
    sc = load_scenario(target)
    overrides = {}
    if getattr(args, "dt", None) is not None:
        overrides["dt"] = args.dt
    if getattr(args, "tend", None) is not None:
        overrides["t_end"] = args.tend
    if overrides:
        sc = replace(sc, **overrides)
        sc.validate()
    return sc


def _print_rows(rows) -> None:
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")


def cmd_run(args) -> int:
    from . import report, runner

    sc = _load(args.scenario, args)
    result = runner.run(sc)
    out = args.out or f"out_{sc.name}"
    os.makedirs(out, exist_ok=True)
    report.write_text(os.path.join(out, "timeseries.csv"), result.series.to_csv())
    report.write_text(os.path.join(out, "metrics.csv"), result.metrics.to_csv())
    report.plot_frequency(result.series, os.path.join(out, "frequency.png"))
    report.plot_powers(result.series, os.path.join(out, "power.png"))
    _print_rows(result.metrics.rows())
    print(f"wrote {out}/timeseries.csv, metrics.csv, frequency.png, power.png")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import runner

    sc = _load(args.scenario, args)
    rep = runner.verify(sc)
    _print_rows(rep.rows())
    return EXIT_OK if rep.passed() else EXIT_VERIFY_FAILED


def cmd_bode(args) -> int:
    from . import report, runner

    sc = _load(args.scenario, args)
    fleet = runner.build_fleet(sc)
    grid = np.logspace(np.log10(args.wmin), np.log10(args.wmax), args.points)
    table = adpf_snapshot(fleet, grid)
    out = args.out or f"out_{sc.name}"
    os.makedirs(out, exist_ok=True)
    report.write_text(os.path.join(out, "adpf_bode.csv"), snapshot_to_csv(table))
    report.plot_bode(table, os.path.join(out, "adpf_bode.png"))
    print(f"wrote {out}/adpf_bode.csv, adpf_bode.png")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    from . import report, runner

    sc = _load(args.scenario, args)
    result = runner.montecarlo(sc, samples=args.samples, seed=args.seed, jobs=args.jobs)
    out = args.out or f"out_{sc.name}"
    os.makedirs(out, exist_ok=True)
    report.write_text(os.path.join(out, "mc_summary.csv"), result.to_csv())
    base = {
        f"f_{p}": result.baseline.series[f"f_{p}"]
        for p in sc.pocs
        if f"f_{p}" in result.baseline.series.channels
    }
    report.write_text(
        os.path.join(out, "mc_baseline.csv"), result.baseline.series.to_csv()
    )
    print(f"samples: {len(result.rows)}  seed: {result.seed}")
    print(f"max coupling-bus frequency deviation: {result.max_deviation():.6e} pu")
    unstable = [r["sample"] for r in result.rows if not r["stable"]]
    if unstable:
        print(f"UNSTABLE samples: {unstable}")
        return EXIT_SIM_ERROR
    print(f"wrote {out}/mc_summary.csv, mc_baseline.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dvppsim",
        description="Design, verify and simulate dynamic virtual power plants.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario, write CSV and figures")
    p_run.add_argument("scenario")
    p_run.add_argument("--dt", type=float, default=None, help="step size [s]")
    p_run.add_argument("--tend", type=float, default=None, help="horizon [s]")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="check participation/aggregation conditions")
    p_ver.add_argument("scenario")
    p_ver.set_defaults(func=cmd_verify)

    p_bode = sub.add_parser("bode", help="export participation-factor magnitudes")
    p_bode.add_argument("scenario")
    p_bode.add_argument("--wmin", type=float, default=1e-2)
    p_bode.add_argument("--wmax", type=float, default=1e3)
    p_bode.add_argument("--points", type=int, default=200)
    p_bode.add_argument("--out", default=None)
    p_bode.set_defaults(func=cmd_bode)

    p_mc = sub.add_parser("montecarlo", help="sweep heterogeneous line R/X ratios")
    p_mc.add_argument("scenario")
    p_mc.add_argument("--samples", type=int, default=None)
    p_mc.add_argument("--seed", type=int, default=None)
    p_mc.add_argument("--jobs", type=int, default=1)
    p_mc.add_argument("--dt", type=float, default=None)
    p_mc.add_argument("--tend", type=float, default=None)
    p_mc.add_argument("--out", default=None)
    p_mc.set_defaults(func=cmd_montecarlo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except SemanticError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except DvppError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM_ERROR


if __name__ == "__main__":
    sys.exit(main())
