"""Command-line entry point: ``hams {sample,tune,bench,diagnose}``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from .experiment import ChainAborted, diagnose_file, load_config, run_experiment, tune_only


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hams", description="Seeded sampler experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML experiment file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the file)")
        sp.add_argument("--out", help="output directory (overrides the file)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for repetitions")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("sample", help="run the configured sampler"))
    common(sub.add_parser("tune", help="burn-in tuning only"))
    common(sub.add_parser("bench", help="compare every method listed in the config"))
    d = sub.add_parser("diagnose", help="ESS and ACF of a draw file")
    d.add_argument("draws", help="draw file written by sample or bench")
    d.add_argument("--config", help="optional config supplying ess_K and acf_max_lag")
    d.add_argument("--out", help="output directory (defaults to the draw file's directory)")
    d.add_argument("--seed", type=int, help="ignored; accepted for a uniform interface")
    d.add_argument("--threads", type=int, default=1, help="ignored")
    d.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "diagnose":
            K, lag = 3000, 100
            if args.config:
                cfg = load_config(args.config)
                K, lag = cfg.output.ess_K, cfg.output.acf_max_lag
            written = diagnose_file(args.draws, K=K, max_lag=lag, out=args.out)
        else:
            cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
            if args.command == "sample":
                cfg = cfg.model_copy(update={"methods": None})
                written = run_experiment(cfg, threads=args.threads)
            elif args.command == "bench":
                written = run_experiment(cfg, threads=args.threads)
            else:
                written = tune_only(cfg)
    except ValidationError as err:
        print(f"invalid configuration:\n{err}", file=sys.stderr)
        return 2
    except ChainAborted as err:
        print(f"aborted: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 4
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    for path in written.values():
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
