"""
Shared plumbing for subcommands: inputs, outputs, config defaults and echoes
"""

import argparse
import json
import logging
import tomllib
from pathlib import Path
from typing import Any

from src.config import settings
from src.models.events import EventLog, IngestReport
from src.models.run import RunConfig
from src.services.event_log import CACHE_MAGIC, load_cache, parse_events, sort_chronological
from src.utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

# argparse destinations that never belong in a run echo
_INTERNAL = frozenset({"command", "handler", "config", "log_level"})


def add_common_arguments(parser: argparse.ArgumentParser, seed: bool = True, workers: bool = False) -> None:
    parser.add_argument("--output", type=Path, help="Output directory (created if missing)")
    if seed:
        parser.add_argument("--seed", type=int, help=f"Random seed (default {settings.seed})")
    if workers:
        parser.add_argument("--workers", type=int, help="Worker threads (default: available CPUs)")


def require(args: argparse.Namespace, *names: str) -> None:
    """
    Check that flags without a usable default were given

    Required flags are checked here rather than by argparse so that a
    --config section can supply them.

    Raises:
        ConfigError: A flag is missing
    """

    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name, None) is None]
    if missing:
        raise ConfigError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def seed_of(args: argparse.Namespace) -> int:
    seed = getattr(args, "seed", None)
    return settings.seed if seed is None else seed


def workers_of(args: argparse.Namespace) -> int:
    workers = getattr(args, "workers", None)
    if workers is not None and workers < 1:
        raise ConfigError(f"--workers must be at least 1, got {workers}")
    return workers or settings.workers


def output_dir(args: argparse.Namespace) -> Path:
    """Create and return the output directory"""

    require(args, "output")
    target = Path(args.output)
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {target}: {e}") from e
    return target


def is_cache(path: Path) -> bool:
    try:
        with open(path, "rb") as handle:
            return handle.read(8) == CACHE_MAGIC.ljust(8, b"\0")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def load_events(path: Path, schema: str = "default") -> tuple[EventLog, IngestReport | None]:
    """
    Read an event log from a columnar cache or a delimited text file

    Text input is sorted into global chronological order. The report is None
    for caches, which were validated when written.
    """

    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")
    if is_cache(path):
        return load_cache(path), None
    log, report = parse_events(path, schema)
    return sort_chronological(log), report


def config_section(path: Path, section: str) -> dict[str, Any]:
    """
    Defaults for one subcommand from a TOML run config

    Keys may be written with dashes or underscores.

    Raises:
        ConfigError: Unreadable file or a section that is not a table
    """

    try:
        with open(path, "rb") as handle:
            document = tomllib.load(handle)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read run config {path}: {e}") from e

    values = document.get(section, {})
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: [{section}] must be a table")
    return {key.replace("-", "_"): value for key, value in values.items()}


def echo_run(args: argparse.Namespace, output: Path, **resolved: Any) -> RunConfig:
    """Write run_config.json with every flag value plus resolved extras"""

    parameters = {
        key: str(value) if isinstance(value, Path) else value
        for key, value in sorted(vars(args).items())
        if key not in _INTERNAL
    }
    parameters.update(resolved)
    run = RunConfig(
        command=args.command,
        seed=seed_of(args),
        output=output,
        parameters=parameters,
        config_file=getattr(args, "config", None),
    )
    run.write()
    return run


def write_json(path: Path, document: Any) -> None:
    path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
