"""
agreement: how often two models make the same threshold decision
"""

import argparse
from pathlib import Path

from src.commands.common import add_common_arguments, echo_run, load_events, output_dir, require
from src.models.report import AgreementReport
from src.services.metrics import auc, threshold_agreement
from src.services.predictor import load_model, ordered_for_prediction, predict_log, warm_up
from src.utils.errors import UndefinedMetricError

REPORT_FILE = "agreement.txt"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("agreement", help="Compare two models' decisions at a threshold")
    parser.add_argument("--input", type=Path, help="Test event cache or file")
    parser.add_argument("--model", type=Path, help="First model file")
    parser.add_argument("--other", type=Path, help="Second model file")
    parser.add_argument("--history", type=Path, help="Earlier events of the test students, streamed first")
    parser.add_argument("--threshold", type=float, default=0.95, help="Decision threshold")
    add_common_arguments(parser, seed=False)
    parser.set_defaults(handler=run)
    return parser


def _auc_or_none(predictions, labels) -> float | None:
    try:
        return auc(predictions, labels)
    except UndefinedMetricError:
        return None


def run(args: argparse.Namespace) -> int:
    require(args, "input", "model", "other")
    output = output_dir(args)

    test = ordered_for_prediction(load_events(args.input)[0])
    history_log = ordered_for_prediction(load_events(args.history)[0]) if args.history is not None else None
    scored = []
    for path in (args.model, args.other):
        model = load_model(path)
        histories = warm_up(model, history_log) if history_log is not None else {}
        scored.append(predict_log(model, test, histories))

    (preds_a, labels), (preds_b, _) = scored
    report = AgreementReport(
        threshold=args.threshold,
        agreement=threshold_agreement(preds_a, preds_b, args.threshold),
        n=len(preds_a),
        auc_a=_auc_or_none(preds_a, labels),
        auc_b=_auc_or_none(preds_b, labels),
    )
    (output / REPORT_FILE).write_text(report.to_text(), encoding="utf-8")
    echo_run(args, output)

    print(report.to_text(), end="")
    return 0
