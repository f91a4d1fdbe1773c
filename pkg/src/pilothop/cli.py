"""Command-line entry point.

Subcommands: topology, simulate, detect, roc, rmsd, sweep-lambda.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import detection, harness, serialize, simulator, solvers, sysmodel
from .errors import ConfigurationError, NumericalError


def _load_config(args) -> harness.ExperimentConfig:
    if args.config is not None:
        config = harness.parse_config(args.config)
    else:
        config = harness.ExperimentConfig()
    if getattr(args, "quick", False):
        config = harness.quick_preset(config)
    from dataclasses import replace

    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if getattr(args, "trials", None) is not None:
        config = replace(config, n_trials=args.trials)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    return config


def _add_common(p, trials=True):
    p.add_argument("--config", metavar="PATH", help="experiment config JSON")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    if trials:
        p.add_argument("--trials", type=int, metavar="N", help="trial count override")
    p.add_argument("--out", metavar="DIR", help="output directory override")
    p.add_argument("--quick", action="store_true",
                   help="reduced-scale preset (18x18 grid, 6 pilots/intervals, 50 trials)")
    p.add_argument("--workers", type=int, default=1, metavar="N", help="worker processes")
    p.add_argument("--dump-trials", action="store_true", help="write per-trial JSON dumps")


def cmd_topology(args):
    config = _load_config(args)
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    rng = harness.stream(config.master_seed, harness.SYSTEM_SPAWN, 0)
    topology, fading, code, a = sysmodel.build_system(config.system, rng)
    path = os.path.join(out_dir, "system.json")
    sysmodel.save_system(path, config.system, topology, fading, code, a)
    print(f"wrote {path}")
    return 0


def cmd_simulate(args):
    config = _load_config(args)
    ctx = harness.build_context(config)
    out_dir = config.output_dir
    trial_dir = os.path.join(out_dir, "trials")
    os.makedirs(trial_dir, exist_ok=True)
    for i in range(config.n_trials):
        result = harness.run_trial(ctx, i, keep_dump=True)
        serialize.dump(result.dump, os.path.join(trial_dir, f"trial_{i:05d}.json"))
    print(f"wrote {config.n_trials} trial dumps to {trial_dir}")
    return 0


def cmd_detect(args):
    config = _load_config(args)
    dump = serialize.load(args.trial)
    y = np.asarray(dump["y"], dtype=float)
    truth = np.asarray(dump["alpha"], dtype=np.int64)
    ctx = harness.build_context(config)
    if y.shape[0] != ctx.a_norm.shape[0]:
        raise ConfigurationError(
            f"trial dump has {y.shape[0]} measurements, system expects {ctx.a_norm.shape[0]}"
        )
    y_norm = y / ctx.scale
    options = config.solver_options()
    rows = []
    for mi, method in enumerate(config.methods):
        reg = ctx.reg_specs[mi]
        if reg is None:
            result = solvers.nnls_solve(ctx.a_norm, y_norm, options)
        else:
            result = solvers.regularized_solve(ctx.a_norm, y_norm, reg, options)
        for thr, cm in detection.roc_sweep(result.alpha_hat, truth, config.thresholds):
            rows.append((method.label, method.lam, thr, cm.p_fa, cm.p_m, 1))
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "detect.csv")
    harness.write_csv(path, harness.ROC_HEADER, rows)
    print(f"wrote {path}")
    return 0


def cmd_roc(args):
    config = _load_config(args)
    harness.run_experiment(
        config, workers=args.workers, dump_trials=args.dump_trials,
        out_dir=config.output_dir,
    )
    print(f"wrote {os.path.join(config.output_dir, 'roc.csv')}")
    return 0


def cmd_rmsd(args):
    config = _load_config(args)
    harness.run_experiment(
        config, workers=args.workers, dump_trials=args.dump_trials,
        out_dir=config.output_dir,
    )
    print(f"wrote {os.path.join(config.output_dir, 'rmsd.csv')}")
    return 0


def cmd_sweep_lambda(args):
    config = _load_config(args)
    harness.sweep_lambda(config, workers=args.workers, out_dir=config.output_dir)
    print(f"wrote {os.path.join(config.output_dir, 'roc.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pilothop",
        description="Activity detection experiments for pilot-hopping grant-free random access",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="build and dump the deterministic system")
    _add_common(p, trials=False)
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("simulate", help="generate and dump trial realizations")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run detectors on a dumped trial")
    _add_common(p)
    p.add_argument("--trial", required=True, metavar="PATH", help="trial dump JSON")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("roc", help="Monte Carlo ROC campaign")
    _add_common(p)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("rmsd", help="Monte Carlo event-localization campaign")
    _add_common(p)
    p.set_defaults(func=cmd_rmsd)

    p = sub.add_parser("sweep-lambda", help="ROC family over the lambda grid")
    _add_common(p)
    p.set_defaults(func=cmd_sweep_lambda)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
