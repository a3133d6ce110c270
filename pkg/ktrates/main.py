import argparse
import logging
import sys
from typing import List, Optional

from .config import LOG_LEVEL
from .errors import KtRatesError
from .lab.config_utils import COMMANDS, load_config
from .lab.runner import EXIT_USAGE, run

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ktrates", description="Katznelson-Tzafriri rate experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config (key = value, or .yaml)")
    parser.add_argument("--out", default=None, help="output directory, overrides output_dir")
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized sweeps")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0

    overrides = {"command": args.command, "output_dir": args.out, "seed": args.seed}
    try:
        config = load_config(args.config, overrides)
    except (KtRatesError, OSError) as e:
        logger.error(f"Could not load {args.config}: {e}")
        return EXIT_USAGE
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
