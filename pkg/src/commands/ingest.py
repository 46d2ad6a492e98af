"""
ingest: delimited event file to chronological columnar cache
"""

import argparse
import logging
from pathlib import Path

from src.commands.common import add_common_arguments, echo_run, load_events, output_dir, require, seed_of, write_json
from src.models.events import SCHEMA_PRESETS
from src.services.event_log import sample_users, save_cache, sort_chronological

logger = logging.getLogger(__name__)

CACHE_FILE = "events.lktlog"
REPORT_FILE = "ingest_report.json"


def register(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("ingest", help="Parse an event file into a chronological cache")
    parser.add_argument("--input", type=Path, help="Delimited event file or existing cache")
    parser.add_argument("--schema", choices=sorted(SCHEMA_PRESETS), default="default", help="Column preset")
    parser.add_argument("--sample-users", type=int, help="Keep only this many randomly chosen students")
    add_common_arguments(parser)
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace) -> int:
    require(args, "input")
    output = output_dir(args)

    log, report = load_events(args.input, args.schema)
    if args.sample_users is not None:
        log = sample_users(log, args.sample_users, seed_of(args))
    log = sort_chronological(log)
    save_cache(log, output / CACHE_FILE)

    summary = report.to_dict() if report is not None else {"rows_read": len(log), "events_kept": len(log)}
    summary["students"] = len(log.students())
    write_json(output / REPORT_FILE, summary)
    echo_run(args, output)

    if report is not None and report.bad_rows:
        for issue in report.issues:
            logger.warning(f"row {issue.row}: {issue.message}{' (fatal)' if issue.fatal else ''}")
    print(f"{len(log)} events from {summary['students']} students -> {output / CACHE_FILE}")
    return 0
