"""Command line entry point: ``cocultrl {train,evaluate,compare}``.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import (ArchitectureMismatch, BatchDegenerate, ConfigInvalid, ManifestMissing,
                     NonFiniteState, OutputDirLocked)
from .experiment import cmd_compare, cmd_evaluate, cmd_train

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser():
    p = argparse.ArgumentParser(prog="cocultrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("--config", required=True, help="YAML config or a run's manifest.json")
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.n_epochs=5 (repeatable)")
    t.add_argument("--seed", type=int, help="master seed (overrides train.master_seed)")
    t.add_argument("--out", help="output directory (default: output_dir from the config)")

    e = sub.add_parser("evaluate", help="roll out a saved policy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--deterministic", action="store_true", help="apply the policy mean, no sampling")
    e.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="join epoch statistics of finished runs")
    c.add_argument("manifests", nargs="+", help="manifest.json files or run directories")
    c.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            m = cmd_train(args.config, args.overrides, seed=args.seed, out=args.out)
            print(json.dumps({"best_epoch": m["best_epoch"], "best_mean_J": m["best_mean_J"]}))
        elif args.command == "evaluate":
            r = cmd_evaluate(args.checkpoint, args.config, n_episodes=args.episodes, seed=args.seed,
                             out=args.out, deterministic=args.deterministic, overrides=args.overrides)
            print(json.dumps({k: r[k] for k in ("terminal_abs_error_mean", "final5h_abs_error_mean",
                                                "final3h_mean_growth_rate")}))
        else:
            r = cmd_compare(args.manifests, out=args.out)
            print(json.dumps(r["summary"], indent=2))
    except (ConfigInvalid, ArchitectureMismatch, ManifestMissing, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BatchDegenerate, NonFiniteState, OutputDirLocked, FloatingPointError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
