"""``nnevp`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys

COMMANDS = ("generate", "train", "extrapolate", "discover-hp")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _cap_threads():
    # BLAS pools must be sized before numpy is imported
    n = os.environ.get("NNEVP_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnevp", description="Neural elasto-viscoplastic constitutive models")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=_u64, help="random seed (overrides seed)")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress output")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    _cap_threads()

    from dataclasses import replace

    from . import experiment as ex
    from .autodiff import TapeError
    from .config import ConfigError, load_config
    from .data import CurveFormatError, InsufficientData
    from .solver import NumericalFailure
    from .training import DegenerateDesign, TrainingAborted

    def say(msg):
        if not args.quiet:
            print(msg, flush=True)

    def warn(msg):
        print(f"warning: {msg}", file=sys.stderr, flush=True)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = args.out or cfg.out_dir
        ex.thread_cap()
        if args.command == "generate":
            entries = ex.cmd_generate(cfg, out)
            say(f"wrote {len(entries)} curves and manifest.yaml to {out}")
        elif args.command == "train":
            res = ex.cmd_train(cfg, out, log=say)
            say(f"final loss {res.report.final_loss:.4e}; results in {out}")
        elif args.command == "extrapolate":
            ex.cmd_extrapolate(cfg, out)
            say(f"wrote extrapolation.csv to {out}")
        else:
            _, _, slope = ex.cmd_discover_hp(cfg, out, warn=warn)
            say(f"log-log Hall-Petch slope {slope:.4f}; table in {out}")
    except (ConfigError, CurveFormatError, InsufficientData, DegenerateDesign) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, TrainingAborted, TapeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
