"""
cluster: fuzzy clustering of tag combos by student-level performance covariance
"""

import argparse
import logging
from pathlib import Path

import pandas as pd

from src.commands.common import add_common_arguments, echo_run, load_events, output_dir, require, seed_of
from src.config import settings
from src.services.clustering import combo_covariance, save_cluster_table, sweep
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

SWEEP_FILE = "cluster_sweep.tsv"


def cluster_file(k: int) -> str:
    return f"clusters_k{k}.tsv"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("cluster", help="Cluster tag combos; several --k values give a sweep")
    parser.add_argument("--input", type=Path, help="Event cache or file")
    parser.add_argument("--k", type=int, nargs="+", help=f"Cluster counts (default {settings.default_k})")
    parser.add_argument("--fuzzifier", type=float, help=f"Fuzzifier m > 1 (default {settings.fuzzifier})")
    parser.add_argument("--min-students", type=int, default=2, help="Minimum students per covariance entry")
    add_common_arguments(parser)
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    require(args, "input")
    output = output_dir(args)
    seed = seed_of(args)
    ks = args.k if args.k is not None else [settings.default_k]
    if isinstance(ks, int):
        ks = [ks]
    if len(set(ks)) != len(ks):
        raise ConfigError(f"--k values repeat: {ks}")

    log, _ = load_events(args.input)
    matrix = combo_covariance(log, args.min_students)
    results = sweep(matrix, sorted(ks), args.fuzzifier, seed)

    records = []
    for model, objective in results:
        save_cluster_table(model, output / cluster_file(model.k))
        records.append(
            {
                "k": model.k,
                "objective": objective,
                "iterations": model.iterations,
                "partition_coefficient": model.partition_coefficient,
                "table": cluster_file(model.k),
            }
        )
    pd.DataFrame.from_records(records).to_csv(
        output / SWEEP_FILE, sep="\t", index=False, float_format="%.17g", lineterminator="\n"
    )
    echo_run(args, output, combos=len(matrix.combos), seed=seed)

    for record in records:
        print(f"k={record['k']}: objective {record['objective']:.6g}, partition coefficient "
              f"{record['partition_coefficient']:.4f}")
    return 0
