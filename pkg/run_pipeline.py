#!/usr/bin/env python3
"""
Run benchmark stages from the command line.

Stages: synth, engineer, select, tune, train, evaluate, calibrate, explain, report

Usage:
  python run_pipeline.py all
  python run_pipeline.py engineer --config config/pipeline.yaml
  python run_pipeline.py select --jobs 4 --seed 7
  python run_pipeline.py train --full-budgets --force
"""

import argparse
import os
import sys

# Make sure local imports resolve
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dotenv import load_dotenv  # noqa: E402

from tools.pipeline_tools import run_all, run_stage  # noqa: E402
from utils.config import STAGES, load_pipeline_config  # noqa: E402
from utils.errors import BenchError  # noqa: E402
from utils.logging import get_logger, reset_logging, setup_logging  # noqa: E402

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Donor kidney discard benchmark: run one pipeline stage or all of them."
    )
    parser.add_argument("stage", choices=STAGES + ["all"], help="Stage to run, or 'all' for every enabled stage")
    parser.add_argument("--config", default=None,
                        help="Pipeline config file (default: $BENCH_CONFIG_PATH or config/pipeline.yaml)")
    parser.add_argument("--jobs", type=int, default=None, help="Maximum parallel workers")
    parser.add_argument("--seed", type=int, default=None, help="Master seed override")
    parser.add_argument("--full-budgets", action="store_true",
                        help="Use the full-scale budgets (1000 selection trials, 300 TPE trials, 30 seeds)")
    parser.add_argument("--force", action="store_true", help="Re-run stages even if their outputs are current")
    parser.add_argument("--log-level", default=None, help="Log level (default: $LOG_LEVEL or INFO)")
    return parser


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    # modules configured logging on import, before .env was read
    reset_logging()
    setup_logging(level=args.log_level)

    try:
        config = load_pipeline_config(args.config, seed=args.seed, jobs=args.jobs,
                                      full_budgets=args.full_budgets)
        if args.stage == "all":
            run_all(config, force=args.force)
        else:
            run_stage(args.stage, config, force=args.force)
    except BenchError as e:
        logger.error(str(e))
        return 2
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
