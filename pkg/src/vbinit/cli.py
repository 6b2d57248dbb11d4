"""Command-line experiment runner.

Subcommands::

    vbinit toy-gen  --out toy.csv [--seed N] [--n N]
    vbinit train    --config run.cfg [--init NAME] [--seed N] [--iters N] [--out DIR]
    vbinit init-only --config run.cfg [--init NAME] [--seed N] [--out DIR]
    vbinit eval     --config run.cfg --checkpoint model.npz [--seed N]
    vbinit sweep    --config run.cfg [--iters N] [--out DIR]
"""
import argparse
import logging
import os
import sys

from .config import ExperimentConfig, load_config, with_overrides
from .data import generate_toy, write_csv
from .exceptions import VBInitError
from .experiment import evaluate_checkpoint, load_dataset, run_experiment
from .initializers import INITIALIZERS
from .vnet import load_network


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="key=value config file")
    p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    p.add_argument("--out", help="output directory (overrides config 'out')")


def build_parser():
    parser = argparse.ArgumentParser(prog="vbinit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-gen", help="write the noisy 1-D toy dataset as CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--out", default="toy.csv", help="CSV path, or a directory to hold toy.csv")

    for name, text in (("train", "initialize and train"),
                       ("init-only", "initialize and evaluate without training")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--init", choices=INITIALIZERS)
        p.add_argument("--iters", type=int)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep", help="all configured initializers x seeds, with summary.csv")
    _common(p)
    p.add_argument("--init", action="append", choices=INITIALIZERS,
                   help="restrict to these initializers (repeatable)")
    p.add_argument("--iters", type=int)
    return parser


def _load(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    seeds = [args.seed] if args.seed is not None else None
    inits = getattr(args, "init", None)
    if isinstance(inits, str):
        inits = [inits]
    iters = getattr(args, "iters", None)
    if args.command == "init-only":
        iters = 0
    return with_overrides(config, seeds=seeds, inits=inits, iterations=iters, out_dir=args.out)


def _print_rows(rows):
    for row in rows:
        metric, mnll = row["metric_mean"], row["mnll_mean"]
        fmt = (lambda v: v if isinstance(v, str) else f"{v:.4f}")
        print(f"{row['init']:>14}  metric {fmt(metric)} +- {fmt(row['metric_std'])}  "
              f"mnll {fmt(mnll)} +- {fmt(row['mnll_std'])}  nc {row['nc_count']}/{row['n_seeds']}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "toy-gen":
            path = args.out
            if os.path.isdir(path):
                path = os.path.join(path, "toy.csv")
            x, y = generate_toy(args.n, args.seed, return_raw=True)
            write_csv(path, x, y, header=["x", "y"])
            print(path)
            return 0
        config = _load(args)
        if args.command == "eval":
            data = load_dataset(config, config.seeds[0])
            net = load_network(args.checkpoint)
            metric, mnll = evaluate_checkpoint(net, data, config.train.n_mc_test,
                                               config.seeds[0])
            name = "error_rate" if net.is_classifier else "rmse"
            print(f"{name}={metric!r} mnll={mnll!r}")
            return 0
        status, rows = run_experiment(config)
        _print_rows(rows)
        return status
    except (VBInitError, OSError) as exc:
        print(f"vbinit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
