#!/usr/bin/env python3
"""
orojar-lab
Disentanglement laboratory: dataset generation, GAN training with Jacobian
orthogonality penalties, SeFa, direction discovery, evaluation and traversals
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.commands import CommandHandler, report_error
from src.config import ConfigurationManager, describe_defaults

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

COMMANDS = ("make-data", "train", "sefa", "discover", "eval", "traverse")


def build_epilog() -> str:
    """Every configuration key with its default, one per line"""
    lines = [
        "configuration keys (override with key=value, values parsed as JSON):",
        *[f"  {key} = {value!r}" for key, value in describe_defaults()],
        "",
        "exit codes: 0 ok, 2 config error, 3 missing input, 4 runtime error",
        "environment: OROJAR_OUTPUT_ROOT rebases relative output_dir values",
    ]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orojar_lab",
        description="orojar-lab",
        epilog=build_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS, help="Subcommand to run")
    parser.add_argument(
        "overrides",
        nargs="*",
        metavar="KEY=VALUE",
        help="Dotted config overrides, e.g. penalty.lambda=10",
    )
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="Experiment configuration file (.json or .toml); defaults apply when omitted"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO)"
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    args = build_parser().parse_intermixed_args(argv)

    # Set logging level
    logging.getLogger().setLevel(getattr(logging, args.log_level))

    try:
        config = ConfigurationManager(args.config).load(args.overrides)
    except Exception as e:
        logger.error(f"Failed to load configuration: {e}")
        return report_error(e)

    handler = CommandHandler(config, args.config, progress=logging.getLogger().isEnabledFor(logging.INFO))
    return handler.handle(args.command)


if __name__ == "__main__":
    sys.exit(main())
