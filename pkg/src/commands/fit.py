"""
fit: train a learner model on an event cache
"""

import argparse
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from src.commands.common import (
    add_common_arguments,
    echo_run,
    load_events,
    output_dir,
    require,
    workers_of,
    write_json,
)
from src.models.features import PARAM_BOUNDS, FeatureSpec
from src.models.model import TrainingRun
from src.services.clustering import load_cluster_table
from src.services.predictor import export_model_text, save_model
from src.services.trainer import fit_model
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

MODEL_FILE = "model.lktmodel"
COEFFICIENTS_FILE = "model.tsv"
REPORT_FILE = "fit_report.json"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("fit", help="Fit a learner model from a feature spec")
    parser.add_argument("--input", type=Path, help="Training event cache or file")
    parser.add_argument("--spec", type=Path, help="Feature spec TOML")
    parser.add_argument("--clusters", type=Path, help="Cluster table from the cluster command")
    parser.add_argument("--min-occurrence", type=int, help="Instance admission threshold")
    parser.add_argument("--l2", type=float, help="L2 penalty on coefficients")
    parser.add_argument("--tol", type=float, help="Inner optimizer gradient tolerance")
    parser.add_argument("--max-iter", type=int, help="Inner optimizer iteration limit")
    parser.add_argument("--outer-cycles", type=int, help="Coordinate cycles of the nonlinear search")
    parser.add_argument("--shards", type=int, help="Row shards of the gradient")
    parser.add_argument("--errordec-passes", type=int, help="Most fitting passes for specs with errordec (at least 2)")
    parser.add_argument("--no-search", action="store_true", help="Keep nonlinear parameters at their spec values")
    add_common_arguments(parser, workers=True)
    parser.set_defaults(handler=run)
    return parser


def training_run(args: argparse.Namespace) -> TrainingRun:
    overrides = {
        "l2_penalty": args.l2,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "outer_cycles": args.outer_cycles,
        "shards": args.shards,
        "errordec_passes": args.errordec_passes,
        "workers": workers_of(args),
    }
    try:
        return TrainingRun(**{key: value for key, value in overrides.items() if value is not None})
    except ValidationError as e:
        raise ConfigError(f"invalid training parameters: {e}") from e


def params_in_bounds(spec: FeatureSpec) -> bool:
    for key, value in spec.nonlinear_params().items():
        lower, upper = PARAM_BOUNDS[key.rsplit(".", 1)[1]]
        if not lower <= value <= upper:
            return False
    return True


def run(args: argparse.Namespace) -> int:
    require(args, "input", "spec")
    output = output_dir(args)

    spec = FeatureSpec.from_toml(args.spec)
    clusters = load_cluster_table(args.clusters) if args.clusters is not None else None
    run_params = training_run(args)
    train, _ = load_events(args.input)

    model = fit_model(train, spec, run_params, clusters, args.min_occurrence, search=not args.no_search)
    save_model(model, output / MODEL_FILE)
    with open(output / COEFFICIENTS_FILE, "w", encoding="utf-8", newline="\n") as handle:
        export_model_text(model, handle)

    history = np.asarray(model.diagnostics.loss_history)
    report = {
        "spec": spec.name,
        "rows": sum(1 for _ in train.questions()),
        "columns": model.catalog.n_columns,
        "nonlinear_params": model.nonlinear_params,
        "params_in_bounds": params_in_bounds(model.spec),
        "loss_monotone": bool(np.all(np.diff(history) <= 1e-12)) if len(history) > 1 else True,
        "diagnostics": model.diagnostics.to_dict(),
    }
    write_json(output / REPORT_FILE, report)
    echo_run(args, output, training=run_params.model_dump())

    if not model.diagnostics.converged:
        logger.warning(f"Fit did not converge: {model.diagnostics.message}")
    print(
        f"{spec.name}: log-loss {model.diagnostics.loss:.6f} over {report['rows']} rows, "
        f"{report['columns']} columns -> {output / MODEL_FILE}"
    )
    return 0
