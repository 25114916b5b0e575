#!/usr/bin/env python3
"""
Load Profile Inpainting Runner
Central script for every step of the pipeline: synthesize or ingest data,
train the encoder, restore missing segments and evaluate restorations.

Usage:
    python run_pipeline.py synth   --config run.cfg
    python run_pipeline.py train   --config run.cfg --train.epochs 10
    python run_pipeline.py restore --config run.cfg --restore.method iterative_top2 --restore.e 0.5
    python run_pipeline.py evaluate --config run.cfg --evaluate.inputs a.csv,b.csv
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

THREAD_VARIABLES = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

logger = logging.getLogger(__name__)


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def show_banner(command: str) -> None:
    print("⚡" * 30)
    print(f"🔌 LOAD PROFILE INPAINTING: {command.upper()} 🔌")
    print("⚡" * 30)


def parse_overrides(extra: Sequence[str]) -> List[Tuple[str, str]]:
    """``--key value`` and ``--key=value`` pairs left over by argparse."""
    overrides = []
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise ValueError(f"unexpected argument {token!r}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"override {token} has no value")
            key, value = token[2:], extra[i + 1]
            i += 2
        overrides.append((key, value))
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Restore missing segments of feeder load profiles with a BERT-style encoder.",
        allow_abbrev=False,
    )
    parser.add_argument("command", choices=["synth", "train", "restore", "evaluate"])
    parser.add_argument("--config", default=None, help="key = value configuration file")
    parser.add_argument("--deterministic", action="store_true", help="pin BLAS/OpenMP pools to one thread")
    parser.add_argument("--log-level", default="INFO")
    parser.add_argument("--log-file", default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.deterministic:
        for name in THREAD_VARIABLES:
            os.environ[name] = "1"
    setup_logging(args.log_level, args.log_file)

    # numpy is only imported from here on, after the thread pools are pinned
    from core_numerics.errors import ConfigError, DataError, NumericalError, ShapeError
    from pipeline import commands
    from pipeline.config import RunConfig

    handlers = {
        "synth": commands.cmd_synth,
        "train": commands.cmd_train,
        "restore": commands.cmd_restore,
        "evaluate": commands.cmd_evaluate,
    }
    try:
        try:
            overrides = parse_overrides(extra)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        config = RunConfig.load(args.config, overrides)
        show_banner(args.command)
        handlers[args.command](config)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        print(f"\n❌ Configuration error: {exc}")
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("Data error: %s", exc)
        print(f"\n❌ Data error: {exc}")
        return EXIT_DATA
    except (NumericalError, ShapeError) as exc:
        logger.error("Numerical failure: %s", exc)
        print(f"\n❌ Numerical failure: {exc}")
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        print("\n\n👋 Interrupted")
        return 130
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
