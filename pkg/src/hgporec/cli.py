"""Command-line entry point: ``hgporec {train,eval,synth,report}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .graph import DataError
from .run import RunError, evaluate_checkpoint, train_run, write_reports
from .synth import write_synthetic_dataset


def cmd_train(args):
    cfg = load_config(args.config)
    result = train_run(cfg, args.out)
    print(result["report"].to_text(), end="")


def cmd_eval(args):
    ks = tuple(int(k) for k in args.k.split(","))
    report = evaluate_checkpoint(args.checkpoint, args.data, ks)
    print(report.to_json(), end="")


def cmd_synth(args):
    inter, sem = write_synthetic_dataset(args.out, args.users, args.items, args.skew, args.clusters, args.seed,
                                         args.dim)
    print(f"wrote {inter} and {sem}")


def cmd_report(args):
    for path in write_reports(args.runs, args.out):
        print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hgporec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a run directory")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a prepared data directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--k", default="10,20")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic interactions + semantic dataset")
    s.add_argument("--users", type=int, default=500)
    s.add_argument("--items", type=int, default=300)
    s.add_argument("--skew", type=float, default=1.0)
    s.add_argument("--clusters", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("report", help="compare run directories as CSV tables")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", default=".")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataError, RunError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
