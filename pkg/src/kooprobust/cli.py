"""Command-line entry point.

    kooprobust [run|collect|fit|bound|solve|evaluate|report] --config C --out D
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from .pipeline import STAGES, MissingArtifact, StageError, run_pipeline


def build_parser():
    p = argparse.ArgumentParser(prog="kooprobust",
                                description="Identify, bound and robustly control a lifted bilinear model.")
    p.add_argument("command", nargs="?", default="run", choices=["run"] + STAGES)
    p.add_argument("--config", help="experiment JSON (default: packaged benchmark)")
    p.add_argument("--out", help="artifact directory (default: config 'output' or runs/<hash>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--stage", choices=STAGES, help="run a single stage")
    p.add_argument("--nominal-only", action="store_true", help="solve only the nominal problem")
    p.add_argument("--threads", type=int, default=1, help="worker threads for simulations")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config, args.seed)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load config: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.get("output") or f"runs/{cfgmod.config_hash(cfg)}"
    stage = args.stage or (None if args.command == "run" else args.command)
    try:
        run, res = run_pipeline(cfg, out, [stage] if stage else None, args.threads, args.nominal_only)
    except StageError as exc:
        cause = exc.__cause__
        if isinstance(cause, MissingArtifact):
            print(f"error: {cause}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    for name, info in res.items():
        print(f"{name}: " + ", ".join(f"{k}={v}" for k, v in (info or {}).items()))
    print(f"artifacts in {run.out} (config {run.hash})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
