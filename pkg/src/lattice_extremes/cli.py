"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 a step failed.
"""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .pipeline import ORDER, StepFailure, run


def build_parser():
    ap = argparse.ArgumentParser(prog="lattice-extremes", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ORDER + ("run",):
        p = sub.add_parser(name, help="run all configured steps" if name == "run" else f"run the {name} step")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "threads": args.threads})
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    steps = None if args.command == "run" else [args.command]
    try:
        man = run(cfg, steps)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StepFailure as e:
        print(str(e), file=sys.stderr)
        return 3
    print(f"wrote {cfg.out}/manifest.json ({', '.join(man['steps'])})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
