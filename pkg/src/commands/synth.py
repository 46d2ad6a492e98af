"""
synth: write a synthetic event log and the model that generated it
"""

import argparse
from pathlib import Path

from pydantic import ValidationError

from src.commands.common import add_common_arguments, config_section, echo_run, output_dir, seed_of
from src.services.event_log import save_cache, write_events
from src.services.predictor import export_model_text, save_model
from src.services.synthetic import SyntheticSpec, generate_log
from src.utils.errors import ConfigError

EVENTS_FILE = "events.csv"
CACHE_FILE = "events.lktlog"
TRUTH_FILE = "truth.lktmodel"
TRUTH_TEXT_FILE = "truth.tsv"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("synth", help="Generate a synthetic event log from a known model")
    parser.add_argument("--spec", type=Path, help="TOML with a [synthetic] table of generator settings")
    parser.add_argument("--students", type=int, help="Number of students")
    parser.add_argument("--items", type=int, help="Number of question items")
    parser.add_argument("--cache", action="store_true", help="Also write a columnar cache")
    add_common_arguments(parser)
    parser.set_defaults(handler=run)
    return parser


def synthetic_spec(args: argparse.Namespace) -> SyntheticSpec:
    settings = config_section(args.spec, "synthetic") if args.spec is not None else {}
    if args.students is not None:
        settings["n_students"] = args.students
    if args.items is not None:
        settings["n_items"] = args.items
    try:
        return SyntheticSpec(**settings)
    except (ValidationError, TypeError) as e:
        raise ConfigError(f"invalid synthetic settings: {e}") from e


def run(args: argparse.Namespace) -> int:
    output = output_dir(args)
    spec = synthetic_spec(args)
    seed = seed_of(args)

    log, truth = generate_log(spec, seed)
    write_events(log, output / EVENTS_FILE)
    if args.cache:
        save_cache(log, output / CACHE_FILE)
    save_model(truth, output / TRUTH_FILE)
    with open(output / TRUTH_TEXT_FILE, "w", encoding="utf-8", newline="\n") as handle:
        export_model_text(truth, handle)
    echo_run(args, output, seed=seed)

    print(f"{len(log)} events from {spec.n_students} students -> {output / EVENTS_FILE}")
    return 0
