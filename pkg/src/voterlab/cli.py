"""Command-line entry point: ``voterlab <subcommand> [--config F] [--seed S] [--out D] [--threads K]``.

Exit status is 0 iff every enabled check passes (1 otherwise, 2 on bad input).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import lattice_rw as lr
from . import limit_laws as ll
from . import stats_harness as sh
from .rng import stream

SUBCOMMANDS = ("constants", "limit-table", "pair-limit", "occupation-cov", "forward",
               "zeta-sample", "b-convergence", "verify")

_DEFAULT_CHECKS = {
    "pair-limit": "pair_limit",
    "occupation-cov": "occupation",
    "forward": "forward_grid",
    "b-convergence": "b_convergence",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voterlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=_u64, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--quiet", action="store_true")
        if name == "verify":
            p.add_argument("--criteria", default="1,2,3,4,5,6,7,8",
                           help="comma-separated acceptance criteria to run without --config")
        if name == "zeta-sample":
            p.add_argument("--paths", type=int, default=1000)
        if name == "constants":
            p.add_argument("--dims", default="3,4,5,6")
    return parser


def _config(args, **overrides) -> sh.ExperimentConfig:
    data = json.loads(args.config.read_text()) if args.config else {}
    data.update({k: v for k, v in overrides.items() if k not in data})
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = str(args.out)
    return sh.ExperimentConfig.from_dict(data)


def _emit(report: sh.VerificationReport, quiet: bool) -> int:
    if not quiet:
        for r in report.records:
            print(r.line())
        print(f"{'PASS' if report.passed else 'FAIL'}  config {report.provenance['config_hash']}")
    return 0 if report.passed else 1


def _log(args):
    return None if args.quiet else (lambda msg: print(msg, file=sys.stderr))


def cmd_constants(args) -> int:
    dims = [int(d) for d in args.dims.split(",")]
    path = lr.write_constants((args.out or Path(".")) / "constants.json", dims)
    if not args.quiet:
        for row in lr.constants_table(dims):
            print(f"d={row['d']} {row['name']} = {row['value']:.15g} +- {row['error_bound']:.1g}")
        print(path)
    return 0


def cmd_limit_table(args) -> int:
    cfg = _config(args)
    table = ll.limit_table(cfg.profile, cfg.d, cfg.time_grid)
    out = Path(cfg.output_dir) / cfg.config_hash()
    path = table.write(out / "limit_table.json")
    if not args.quiet:
        print(f"{table.table_id} {path}")
    return 0


def cmd_zeta_sample(args) -> int:
    cfg = _config(args)
    rng = stream(cfg.seed, "limit_laws", "zeta_sample", 0)
    if cfg.d == 3:
        paths = ll.sample_zeta_path(cfg.profile, cfg.time_grid, rng, args.paths)
    else:
        paths = ll.sample_ito_path(cfg.profile, cfg.d, cfg.time_grid, rng, args.paths)
    out = Path(cfg.output_dir) / cfg.config_hash()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "limit_paths.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t", "value"])
        for i, row in enumerate(paths):
            for t, v in zip(cfg.time_grid, row):
                w.writerow([i, repr(float(t)), repr(float(v))])
    if not args.quiet:
        print(f"{args.paths} paths, variance at t={cfg.time_grid[-1]:g}: "
              f"{float(np.var(paths[:, -1])):.6g}")
        print(out / "limit_paths.csv")
    return 0


def cmd_checks(args) -> int:
    cfg = _config(args, checks=[_DEFAULT_CHECKS[args.command]])
    report = sh.run_experiment(cfg, threads=args.threads, log=_log(args))
    return _emit(report, args.quiet)


def cmd_verify(args) -> int:
    if args.config:
        cfg = _config(args)
        return _emit(sh.run_experiment(cfg, threads=args.threads, log=_log(args)), args.quiet)
    configs = sh.acceptance_configs(args.seed if args.seed is not None else 20240601,
                                    str(args.out or "runs"))
    status = 0
    for key in args.criteria.split(","):
        report = sh.run_experiment(configs[key.strip()], threads=args.threads, log=_log(args))
        if not args.quiet:
            print(f"criterion {key.strip()}: {'PASS' if report.passed else 'FAIL'}")
        status |= _emit(report, args.quiet)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    handlers = {"constants": cmd_constants, "limit-table": cmd_limit_table,
                "zeta-sample": cmd_zeta_sample, "verify": cmd_verify}
    try:
        return handlers.get(args.command, cmd_checks)(args)
    except (ValueError, KeyError, OSError, sh.ResourceBudgetExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
