"""
simulate: compare decision rules on simulated students
"""

import argparse
import logging
from pathlib import Path

from src.commands.common import add_common_arguments, echo_run, output_dir, require, workers_of
from src.models.pdr import ModelChoice, SimulationConfig
from src.services.pdr_sim import ModelSource, compare_pdrs, oracle_source, summary_frame, write_summary, write_traces
from src.services.predictor import load_model
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.tsv"
TRACES_FILE = "traces.jsonl"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("simulate", help="Run decision rules against simulated students")
    parser.add_argument("--spec", type=Path, help="Simulation TOML (population, models, rules)")
    parser.add_argument("--pdr", nargs="+", help="Only these rule names from the simulation file")
    parser.add_argument("--students", type=int, help="Override the number of simulated students")
    parser.add_argument("--no-traces", action="store_true", help="Skip the per-trial trace file")
    add_common_arguments(parser, workers=True)
    parser.set_defaults(handler=run)
    return parser


def model_source(name: str, choice: ModelChoice) -> ModelSource:
    if choice.source == "oracle":
        return oracle_source(choice.d_offset)
    if choice.path is None:
        raise ConfigError(f"model '{name}' reads a file but gives no path")
    return load_model(choice.path)


def run(args: argparse.Namespace) -> int:
    require(args, "spec")
    output = output_dir(args)

    config = SimulationConfig.from_toml(args.spec)
    pdrs = config.pdrs
    if args.pdr:
        unknown = sorted(set(args.pdr) - set(pdrs))
        if unknown:
            raise ConfigError(f"unknown rule(s) {', '.join(unknown)}; file defines {', '.join(pdrs)}")
        pdrs = {name: pdrs[name] for name in args.pdr}
    n_students = args.students if args.students is not None else config.n_students
    seed = args.seed if args.seed is not None else config.seed
    models = {name: model_source(name, choice) for name, choice in config.models.items()}

    comparison = compare_pdrs(config.population, models, pdrs, n_students, seed, workers_of(args))
    with open(output / SUMMARY_FILE, "w", encoding="utf-8", newline="\n") as handle:
        write_summary(comparison.rows, handle)
    if not args.no_traces:
        with open(output / TRACES_FILE, "w", encoding="utf-8", newline="\n") as handle:
            write_traces(comparison, handle)
    echo_run(args, output, seed=seed, n_students=n_students, pdrs=sorted(pdrs))

    print(summary_frame(comparison.rows).to_string(index=False))
    return 0
