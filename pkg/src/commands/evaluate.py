"""
evaluate: predict a test slice and report AUC, log-loss and calibration
"""

import argparse
import logging
from pathlib import Path

from src.commands.common import add_common_arguments, echo_run, load_events, output_dir, require
from src.models.model import DeliveryPolicy
from src.services.history_store import load_histories, save_histories
from src.services.metrics import evaluate
from src.services.predictor import load_model, ordered_for_prediction, predict_log, scale_intercepts, warm_up
from src.utils.logging import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()

TEXT_FILE = "evaluation.txt"
JSON_FILE = "evaluation.jsonl"
PREDICTIONS_FILE = "predictions.tsv"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("evaluate", help="Score a model on a test slice")
    parser.add_argument("--input", type=Path, help="Test event cache or file")
    parser.add_argument("--model", type=Path, help="Model file from fit")
    parser.add_argument("--history", type=Path, help="Earlier events of the test students, streamed first")
    parser.add_argument("--load-state", type=Path, help="Student history snapshot to start from")
    parser.add_argument("--save-state", type=Path, help="Write the student histories after evaluation")
    parser.add_argument("--batch-size", type=int, default=1, help="Events per delivered batch")
    parser.add_argument(
        "--policy",
        choices=[policy.value for policy in DeliveryPolicy],
        default=DeliveryPolicy.WITHHELD.value,
        help="When labels inside a batch become visible",
    )
    parser.add_argument("--intercept-scale", type=float, help="Experimental: multiply intercepts by this factor")
    parser.add_argument("--bins", type=int, help="Calibration bins")
    parser.add_argument("--write-predictions", action="store_true", help="Also write per-question predictions")
    add_common_arguments(parser, seed=False)
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    require(args, "input", "model")
    output = output_dir(args)

    model = load_model(args.model)
    if args.intercept_scale is not None:
        model = scale_intercepts(model, args.intercept_scale)

    histories = load_histories(args.load_state) if args.load_state is not None else {}
    if args.history is not None:
        history_log, _ = load_events(args.history)
        with perf_logger.timed("WarmUp", events=len(history_log)):
            warm_up(model, ordered_for_prediction(history_log), histories)

    test, _ = load_events(args.input)
    with perf_logger.timed("Predict", events=len(test), batch=args.batch_size):
        predictions, labels = predict_log(
            model, ordered_for_prediction(test), histories, args.batch_size, DeliveryPolicy(args.policy)
        )

    report = evaluate(predictions, labels, args.bins, label=f"{model.spec.name} on {Path(args.input).name}")
    (output / TEXT_FILE).write_text(report.to_text(), encoding="utf-8")
    (output / JSON_FILE).write_text(report.to_json_lines(), encoding="utf-8")
    if args.write_predictions:
        with open(output / PREDICTIONS_FILE, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("prediction\tcorrect\n")
            for p, y in zip(predictions.tolist(), labels.tolist(), strict=True):
                handle.write(f"{p:.17g}\t{y}\n")
    if args.save_state is not None:
        save_histories(histories, args.save_state)
    echo_run(args, output)

    print(report.to_text(), end="")
    return 0
