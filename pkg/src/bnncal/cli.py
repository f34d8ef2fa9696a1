"""Command-line entry point: ``bnncal {toy,run,bench,stats,reliability}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from .errors import BnncalError
from .stats import LossMatrix


def _override(cfg: ex.ExperimentConfig, args) -> ex.ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes.update(seed=args.seed, bnn=replace(cfg.bnn, seed=args.seed),
                       baseline=replace(cfg.baseline, seed=args.seed))
    if args.out is not None:
        changes["out"] = args.out
    if args.bins is not None:
        changes["bins"] = args.bins
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    return replace(cfg, **changes) if changes else cfg


def _print_result(res: ex.ExperimentResult) -> None:
    print(f"{res.dataset}: tau_baseline={res.tau_baseline} tau_bnn={res.tau_bnn}")
    print(f"  {'method':<13}{'log_loss':>10}{'brier':>10}{'ece':>10}")
    for m, r in res.methods.items():
        print(f"  {m:<13}{r.log_loss:>10.6f}{r.brier:>10.6f}{r.ece:>10.6f}")


def _print_report(report: dict) -> None:
    fr = report["friedman"]
    print("average ranks: " + ", ".join(f"{m}={r:.4f}" for m, r in report["avg_ranks"].items()))
    print(f"Friedman chi2={fr['statistic']:.4f} (uncorrected {fr['uncorrected_statistic']:.4f}), "
          f"p={fr['p_value']:.3g}, reject H0: {fr['reject_null']}")
    for pair in report["pairwise"]:
        flag = "*" if pair["significant"] else " "
        print(f"  {flag} {pair['a']} vs {pair['b']}: p={pair['raw_p']:.4g} holm={pair['adjusted_p']:.4g}")
    print("groups: " + " | ".join(", ".join(c) for c in report["cd"]["cliques"]))


def cmd_toy(args) -> int:
    cfg = ex.ExperimentConfig.from_file(args.config) if args.config else ex.toy_config(n=args.n)
    cfg = _override(cfg, args)
    _print_result(ex.run_experiment(cfg))
    return 0


def cmd_run(args) -> int:
    cfg = _override(ex.ExperimentConfig.from_file(args.config), args)
    _print_result(ex.run_experiment(cfg))
    return 0


def cmd_bench(args) -> int:
    configs = [_override(c, args) for c in ex.load_configs(args.config)]
    alpha = args.alpha if args.alpha is not None else configs[0].alpha
    jobs = args.jobs if args.jobs > 0 else ex.cpu_count()
    _, report, errors = ex.run_benchmark(configs, out=args.out, alpha=alpha, jobs=jobs)
    _print_report(report)
    for err in errors:
        print(json.dumps(err), file=sys.stderr)
    return 1 if errors else 0


def cmd_stats(args) -> int:
    L = LossMatrix.from_csv(args.lossmatrix)
    out = args.out if args.out is not None else Path(args.lossmatrix).parent
    report = ex.stats_report(L, args.alpha if args.alpha is not None else 0.05, out)
    _print_report(report)
    return 0


def cmd_reliability(args) -> int:
    for path in ex.reemit_reliability(args.results, args.bins or 10):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnncal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False, nargs=None):
        if nargs:
            p.add_argument("--config", required=True, nargs=nargs)
        else:
            p.add_argument("--config", required=config_required)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--alpha", type=float)
        p.add_argument("--bins", type=int)

    p = sub.add_parser("toy", help="generate the simulated dataset and run the protocol")
    common(p)
    p.add_argument("--n", type=int, default=10000)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("run", help="run the protocol on one dataset config")
    common(p, config_required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run several configs and compare methods")
    common(p, nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="parallel experiments (0 = all cores)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stats", help="rank statistics over an existing loss-matrix CSV")
    p.add_argument("lossmatrix")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("reliability", help="re-emit reliability CSVs from predictions.csv")
    p.add_argument("results", help="a per-dataset result directory")
    p.add_argument("--bins", type=int)
    p.set_defaults(func=cmd_reliability)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ExperimentError as exc:
        print(json.dumps(exc.record), file=sys.stderr)
        return 2
    except (BnncalError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
