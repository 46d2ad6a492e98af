"""
split: simulated-offset temporal split into train and test caches
"""

import argparse
import logging
from pathlib import Path

from src.commands.common import add_common_arguments, echo_run, load_events, output_dir, require, seed_of, write_json
from src.config import settings
from src.services.event_log import (
    assign_simulated_offsets,
    audit_split,
    save_cache,
    sort_chronological,
    temporal_slice,
)
from src.utils.errors import DataError

logger = logging.getLogger(__name__)

TRAIN_FILE = "train.lktlog"
TEST_FILE = "test.lktlog"
REPORT_FILE = "split_report.json"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("split", help="Cut a later test slice and backfill its students' history")
    parser.add_argument("--input", type=Path, help="Event cache from ingest")
    parser.add_argument("--start-frac", type=float, help="Test slice start as a fraction of rows")
    parser.add_argument("--end-frac", type=float, help="Test slice end as a fraction of rows")
    parser.add_argument(
        "--horizon-ms",
        type=int,
        default=settings.offset_horizon_ms,
        help="Range of the per-student start offsets",
    )
    parser.add_argument("--no-offsets", action="store_true", help="Split on the original timestamps")
    parser.add_argument("--audit", action="store_true", help="Check every split invariant and fail on violations")
    add_common_arguments(parser)
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    require(args, "input", "start_frac", "end_frac")
    output = output_dir(args)
    seed = seed_of(args)

    log, _ = load_events(args.input)
    if not args.no_offsets:
        log = assign_simulated_offsets(log, args.horizon_ms, seed)
    log = sort_chronological(log)
    split = temporal_slice(log, args.start_frac, args.end_frac)

    save_cache(split.train, output / TRAIN_FILE)
    save_cache(split.test, output / TEST_FILE)

    report: dict[str, object] = {
        "rows": len(log),
        "train_rows": len(split.train),
        "test_rows": len(split.test),
        "test_students": len(split.test.students()),
    }
    if args.audit:
        violations = audit_split(split, log)
        report["violations"] = violations
        write_json(output / REPORT_FILE, report)
        if violations:
            raise DataError(f"split audit found {len(violations)} violation(s); first: {violations[0]}")
        logger.info("Split audit passed")
    else:
        write_json(output / REPORT_FILE, report)
    echo_run(args, output, seed=seed)

    print(f"train {len(split.train)} rows, test {len(split.test)} rows -> {output}")
    return 0
