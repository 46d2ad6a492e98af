"""
Knowledge-tracing engine - command-line entry point
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from pydantic import ValidationError

from src import __description__, __version__
from src.commands import agreement, cluster, evaluate, fit, ingest, simulate, split, synth
from src.commands.common import config_section
from src.config import settings
from src.utils.errors import ConfigError, LktError
from src.utils.logging import setup_logging

logger = logging.getLogger(__name__)

COMMANDS = (ingest, split, fit, evaluate, agreement, cluster, simulate, synth)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    """Top-level parser plus each subcommand's parser by name"""

    parser = argparse.ArgumentParser(prog="lkt-engine", description=__description__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help=f"Log level (default {settings.log_level}, env LKT_ENGINE_LOG)")
    parser.add_argument("--config", type=Path, help="TOML file; the section named after the command sets defaults")
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    commands = {}
    for module in COMMANDS:
        sub = module.register(subparsers)
        commands[sub.prog.rsplit(" ", 1)[-1]] = sub
    return parser, commands


def parse_arguments(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """
    Parse argv, applying --config defaults for the chosen subcommand

    Raises:
        ConfigError: The config section names options the command lacks
    """

    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.config is None or args.command is None:
        return args

    defaults = config_section(args.config, args.command)
    unknown = sorted(set(defaults) - set(vars(args)))
    if unknown:
        raise ConfigError(f"{args.config}: [{args.command}] has unknown option(s) {', '.join(unknown)}")
    commands[args.command].set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and map its failure to an exit code"""

    setup_logging(settings.log_level)
    try:
        args = parse_arguments(argv)
        if args.log_level:
            setup_logging(args.log_level)
        if args.command is None:
            build_parser()[0].print_help(sys.stderr)
            return ConfigError.exit_code
        return args.handler(args)

    except LktError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return ConfigError.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
