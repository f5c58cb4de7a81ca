"""Command-line entry point: ``risgkg run|nist|table1 --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .experiment import (ExperimentConfig, default_workers, emit_outputs, nist_campaign,
                         run_sweep, table1)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("risgkg")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="risgkg", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run a sweep and write sweep.csv, config.echo and chart specs"),
                        ("nist", "generate key streams and run the nine randomness tests"),
                        ("table1", "minimum available power reaching KER <= 0.1 per mode and L")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $RISGKG_WORKERS or 1)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = cfg.replace(seed=args.seed)
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg.replace(workers=workers)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            res = run_sweep(cfg)
            emit_outputs(res, args.out)
            rate = res.failure_rate()
        elif args.command == "table1":
            tab, res = table1(cfg, args.out)
            for (mode, L), p in tab.items():
                print(f"{mode} L={L}: {'-' if p is None else f'{p:g} dBm'}")
            rate = res.failure_rate()
        else:
            reps = nist_campaign(cfg, args.out)
            table = args.out / "nist_table.txt"
            if table.exists():
                print(table.read_text(), end="")
            if any(r["partial"] for r in reps.values()):
                log.warning("partial NIST report: not enough key bits for every stream")
            rate = 0.0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot write outputs: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if rate > cfg.max_failure_rate:
        print(f"solver failure rate {rate:.3f} exceeds {cfg.max_failure_rate}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
