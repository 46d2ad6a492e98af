"""
Event-log ingestion, ordering and temporal splitting
"""

import dataclasses
import io
import logging
import math
from collections.abc import Callable, Iterator
from operator import attrgetter
from pathlib import Path
from typing import Any, BinaryIO, TextIO

import numpy as np
import pandas as pd

from src.config import settings
from src.models.events import (
    SCHEMA_PRESETS,
    EventKind,
    EventLog,
    IngestReport,
    InteractionEvent,
    Ordering,
    RowIssue,
    SchemaMapping,
    TemporalSplit,
)
from src.utils.binio import pack_strings, read_container, unpack_strings, write_container
from src.utils.errors import DataError, ParameterError, RowLimitError, SchemaError
from src.utils.logging import PerformanceLogger
from src.utils.validators import (
    canonical_tags,
    parse_int,
    parse_optional_bool,
    parse_optional_int,
    validate_fraction_window,
)

logger = logging.getLogger(__name__)
performance_logger = PerformanceLogger()

CACHE_MAGIC = b"LKTLOG"
CACHE_VERSION = 1


def resolve_schema(schema: SchemaMapping | str) -> SchemaMapping:
    """Look up a named schema preset"""

    if isinstance(schema, SchemaMapping):
        return schema
    try:
        return SCHEMA_PRESETS[schema]
    except KeyError:
        raise ParameterError(
            f"Unknown schema preset '{schema}'. Valid presets: {', '.join(SCHEMA_PRESETS)}"
        ) from None


_RAGGED = "\x00ragged:"

Source = BinaryIO | TextIO | Path | str


class _RaggedRows(Exception):
    """The fast reader met a row with more fields than the header"""


def _rewindable(source: Source) -> tuple[Source, Callable[[], None]]:
    """The source and a callback that moves it back to where reading starts"""

    if isinstance(source, (Path, str)):
        return source, lambda: None
    if not source.seekable():
        data = source.read()
        source = io.BytesIO(data) if isinstance(data, bytes) else io.StringIO(data)
    start = source.tell()
    return source, lambda: source.seek(start)  # type: ignore[union-attr]


def _read_header(source: Source, delimiter: str) -> list[str]:
    try:
        return list(pd.read_csv(source, sep=delimiter, nrows=0, encoding="utf-8").columns)
    except pd.errors.EmptyDataError:
        raise SchemaError("input has no header row") from None
    except UnicodeDecodeError as e:
        raise DataError(f"input is not valid UTF-8 at byte {e.start}: {e.reason}") from None


def _read_chunks(source: Source, delimiter: str, chunk_rows: int, width: int | None) -> Iterator[pd.DataFrame]:
    """
    Every cell as text, chunk_rows rows at a time

    Without width the C reader is used and a row with extra fields raises
    _RaggedRows. With width the python engine's bad-line hook fills such a
    row with a marker so its position and field count reach the row loop.

    Raises:
        DataError: Undecodable bytes or broken quoting
    """

    options: dict[str, Any] = {"sep": delimiter, "dtype": str, "keep_default_na": False, "encoding": "utf-8"}
    if width is not None:
        options["engine"] = "python"
        options["on_bad_lines"] = lambda fields: [f"{_RAGGED}{len(fields)}"] * width
    try:
        with pd.read_csv(source, chunksize=chunk_rows, **options) as reader:
            for chunk in reader:
                # short rows pad with NaN
                yield chunk.fillna("")
    except UnicodeDecodeError as e:
        raise DataError(f"input is not valid UTF-8 at byte {e.start}: {e.reason}") from None
    except pd.errors.ParserError as e:
        if width is None:
            raise _RaggedRows from None
        raise DataError(f"cannot split input into rows: {e}") from None


def parse_events(
    source: Source,
    schema: SchemaMapping | str = "default",
    max_bad_row_fraction: float | None = None,
    chunk_rows: int | None = None,
) -> tuple[EventLog, IngestReport]:
    """
    Parse a delimited event file into a raw-ordered EventLog

    Unparseable cells (non-numeric timestamps, unknown tokens) and rows with
    extra fields are fatal row issues and abort the parse once they exceed
    max_bad_row_fraction of the rows. Invariant violations (part out of
    range, lecture with correctness) are recorded and the row excluded.
    The file is read chunk_rows rows at a time.

    Raises:
        SchemaError: No header, or a required column is missing
        DataError: Undecodable bytes or broken quoting
        RowLimitError: Too many unparseable rows
    """

    mapping = resolve_schema(schema)
    if max_bad_row_fraction is None:
        max_bad_row_fraction = settings.max_bad_row_fraction
    chunk_rows = chunk_rows or settings.ingest_chunk_rows

    source, rewind = _rewindable(source)
    columns = _read_header(source, mapping.delimiter)
    missing = [column for column in mapping.required_columns() if column not in columns]
    if missing:
        raise SchemaError(f"missing required columns: {', '.join(missing)}")

    try:
        rewind()
        report, events, fatal = _parse_rows(_read_chunks(source, mapping.delimiter, chunk_rows, None), mapping)
    except _RaggedRows:
        logger.warning("Rows with extra fields found, re-reading with the row-level parser")
        rewind()
        chunks = _read_chunks(source, mapping.delimiter, chunk_rows, len(columns))
        report, events, fatal = _parse_rows(chunks, mapping)

    if fatal > max_bad_row_fraction * report.rows_read:
        performance_logger.log_validation_error(
            "row_limit", {"fatal_rows": fatal, "rows": report.rows_read}
        )
        first = next(issue for issue in report.issues if issue.fatal)
        raise RowLimitError(
            f"{fatal} of {report.rows_read} rows unparseable "
            f"(limit {max_bad_row_fraction:.2%}); first: row {first.row}: {first.message}"
        )

    events, report.tie_bumps = _break_ties(events)
    report.events_kept = len(events)
    performance_logger.log_ingest(
        report.rows_read, report.events_kept, report.bad_rows, report.tie_bumps
    )
    return EventLog(tuple(events), Ordering.RAW), report


def _parse_rows(
    chunks: Iterator[pd.DataFrame], mapping: SchemaMapping
) -> tuple[IngestReport, list[InteractionEvent], int]:
    """Events, issues and the fatal-row count over all chunks; row numbers run across chunks"""

    report = IngestReport()
    interned: dict[str, str] = {}
    tag_sets: dict[tuple[int, ...], tuple[int, ...]] = {}
    events: list[InteractionEvent] = []
    fatal = 0

    for frame in chunks:
        def optional(column: str | None) -> list[str] | None:
            if column is None or column not in frame.columns:
                return None
            return frame[column].tolist()

        students = frame[mapping.student].tolist()
        items = frame[mapping.item].tolist()
        timestamps = frame[mapping.timestamp].tolist()
        parts = frame[mapping.part].tolist()
        tag_cells = frame[mapping.tags].tolist()
        corrects = frame[mapping.correct].tolist()
        kinds = optional(mapping.kind)
        durations = optional(mapping.duration)
        explanations = optional(mapping.explanation)
        offset = report.rows_read
        report.rows_read += len(frame)

        for index in range(len(frame)):
            row = offset + index
            if students[index].startswith(_RAGGED):
                fatal += 1
                width = students[index].removeprefix(_RAGGED)
                report.issues.append(RowIssue(row, f"expected {len(frame.columns)} fields, saw {width}", fatal=True))
                continue
            try:
                timestamp = parse_int(timestamps[index], "timestamp")
                part = parse_int(parts[index], "part")
                tags = canonical_tags(tag_cells[index])
                correct = parse_optional_bool(corrects[index], "correct")
                duration = parse_optional_int(durations[index], "duration") if durations is not None else None
                explanation = (
                    parse_optional_bool(explanations[index], "explanation") if explanations is not None else None
                )
                kind = EventKind.QUESTION
                if kinds is not None:
                    token = kinds[index].strip()
                    if token == mapping.lecture_token:
                        kind = EventKind.LECTURE
                    elif token != mapping.question_token:
                        raise ValueError(f"unknown event kind {token!r}")
            except ValueError as e:
                fatal += 1
                report.issues.append(RowIssue(row, str(e), fatal=True))
                continue

            student = interned.setdefault(students[index], students[index])
            item = interned.setdefault(items[index], items[index])
            tags = tag_sets.setdefault(tags, tags)
            try:
                events.append(
                    InteractionEvent(
                        student, item, kind, part, tags, timestamp, correct, duration, explanation
                    )
                )
            except ValueError as e:
                report.issues.append(RowIssue(row, str(e)))

    return report, events, fatal


def _break_ties(events: list[InteractionEvent]) -> tuple[list[InteractionEvent], int]:
    """Make per-student timestamps strictly increasing, later rows bumped by 1 ms"""

    if not events:
        return events, 0

    frame = pd.DataFrame(
        {
            "student": [event.student_id for event in events],
            "timestamp": np.fromiter((e.timestamp_ms for e in events), dtype=np.int64),
            "row": np.arange(len(events), dtype=np.int64),
        }
    )
    frame = frame.sort_values(["student", "timestamp", "row"], kind="stable")
    rank = frame.groupby("student", sort=False).cumcount().to_numpy(dtype=np.int64)
    # new_i = max(ts_i, new_{i-1} + 1) == rank_i + cummax(ts_j - rank_j)
    shifted = pd.Series(frame["timestamp"].to_numpy() - rank, index=frame.index)
    running = shifted.groupby(frame["student"].to_numpy(), sort=False).cummax().to_numpy()
    bumped = running + rank

    changed = np.nonzero(bumped != frame["timestamp"].to_numpy())[0]
    rows = frame["row"].to_numpy()
    for position in changed:
        row = int(rows[position])
        events[row] = dataclasses.replace(events[row], timestamp_ms=int(bumped[position]))
    if len(changed):
        logger.warning(f"Broke {len(changed)} per-student timestamp ties by row order")
    return events, int(len(changed))


def write_events(log: EventLog, target: TextIO | Path | str, schema: SchemaMapping | str = "default") -> None:
    """Serialize a log in the delimited format parse_events reads"""

    mapping = resolve_schema(schema)

    def bool_cell(value: bool | None, absent: str = "") -> str:
        if value is None:
            return absent
        return "1" if value else "0"

    columns: dict[str, list[str]] = {
        mapping.student: [e.student_id for e in log],
        mapping.item: [e.item_id for e in log],
        mapping.timestamp: [str(e.timestamp_ms) for e in log],
        mapping.part: [str(e.part) for e in log],
        mapping.tags: [" ".join(map(str, e.tags)) for e in log],
        mapping.correct: [bool_cell(e.correct, "-1" if mapping.name == "ednet" else "") for e in log],
    }
    if mapping.kind:
        columns[mapping.kind] = [
            mapping.question_token if e.is_question else mapping.lecture_token for e in log
        ]
    if mapping.duration:
        columns[mapping.duration] = [
            "" if e.trial_duration_ms is None else str(e.trial_duration_ms) for e in log
        ]
    if mapping.explanation:
        columns[mapping.explanation] = [bool_cell(e.had_prior_explanation) for e in log]

    frame = pd.DataFrame(columns, dtype=str)
    frame.to_csv(target, sep=mapping.delimiter, index=False, lineterminator="\n")


def events_to_text(log: EventLog, schema: SchemaMapping | str = "default") -> str:
    buffer = io.StringIO()
    write_events(log, buffer, schema)
    return buffer.getvalue()


def save_cache(log: EventLog, path: Path | str) -> None:
    """Write the columnar binary cache"""

    student_codes, student_vocab = _encode([e.student_id for e in log])
    item_codes, item_vocab = _encode([e.item_id for e in log])
    student_buf, student_off = pack_strings(student_vocab)
    item_buf, item_off = pack_strings(item_vocab)

    def optional_flag(value: bool | None) -> int:
        return -1 if value is None else int(value)

    tag_lengths = np.fromiter((len(e.tags) for e in log), dtype=np.int64, count=len(log))
    arrays = {
        "student_codes": student_codes,
        "student_buf": student_buf,
        "student_off": student_off,
        "item_codes": item_codes,
        "item_buf": item_buf,
        "item_off": item_off,
        "kind": np.fromiter((0 if e.is_question else 1 for e in log), dtype=np.uint8, count=len(log)),
        "part": np.fromiter((e.part for e in log), dtype=np.uint8, count=len(log)),
        "tag_off": np.cumsum(tag_lengths, dtype=np.int64),
        "tags": np.fromiter((t for e in log for t in e.tags), dtype=np.int64),
        "timestamp": np.fromiter((e.timestamp_ms for e in log), dtype=np.int64, count=len(log)),
        "correct": np.fromiter((optional_flag(e.correct) for e in log), dtype=np.int8, count=len(log)),
        "duration": np.fromiter(
            (-1 if e.trial_duration_ms is None else e.trial_duration_ms for e in log),
            dtype=np.int64,
            count=len(log),
        ),
        "explanation": np.fromiter(
            (optional_flag(e.had_prior_explanation) for e in log), dtype=np.int8, count=len(log)
        ),
    }
    write_container(
        Path(path),
        CACHE_MAGIC,
        CACHE_VERSION,
        {"ordering": log.ordering.value, "count": len(log)},
        arrays,
    )


def load_cache(path: Path | str) -> EventLog:
    """Read a columnar binary cache"""

    header, arrays = read_container(Path(path), CACHE_MAGIC, {CACHE_VERSION})
    students = unpack_strings(arrays["student_buf"], arrays["student_off"])
    items = unpack_strings(arrays["item_buf"], arrays["item_off"])

    def optional_flag(value: int) -> bool | None:
        return None if value < 0 else bool(value)

    tag_values = arrays["tags"].tolist()
    tag_ends = arrays["tag_off"].tolist()
    events = []
    start = 0
    for index, (s, i, k, p, ts, c, d, x) in enumerate(
        zip(
            arrays["student_codes"].tolist(),
            arrays["item_codes"].tolist(),
            arrays["kind"].tolist(),
            arrays["part"].tolist(),
            arrays["timestamp"].tolist(),
            arrays["correct"].tolist(),
            arrays["duration"].tolist(),
            arrays["explanation"].tolist(),
            strict=True,
        )
    ):
        end = tag_ends[index]
        events.append(
            InteractionEvent(
                students[s],
                items[i],
                EventKind.QUESTION if k == 0 else EventKind.LECTURE,
                p,
                tuple(tag_values[start:end]),
                ts,
                optional_flag(c),
                None if d < 0 else d,
                optional_flag(x),
            )
        )
        start = end
    return EventLog(tuple(events), Ordering(header["ordering"]))


def _encode(values: list[str]) -> tuple[np.ndarray, list[str]]:
    """Codes by first appearance, plus the vocabulary"""

    vocab: dict[str, int] = {}
    codes = np.fromiter(
        (vocab.setdefault(value, len(vocab)) for value in values), dtype=np.int64, count=len(values)
    )
    return codes, list(vocab)


def assign_simulated_offsets(log: EventLog, horizon_ms: int, seed: int) -> EventLog:
    """
    Shift each student's events by one uniform draw in [0, horizon_ms)

    Draws are made in sorted student-id order so the result depends only on
    the set of students and the seed.
    """

    if horizon_ms <= 0:
        raise ParameterError(f"horizon_ms must be positive, got {horizon_ms}")

    students = log.students()
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, horizon_ms, size=len(students), dtype=np.int64)
    offsets = dict(zip(students, draws.tolist(), strict=True))

    shifted = tuple(event.shifted(offsets[event.student_id]) for event in log)
    ordering = Ordering.RAW if log.ordering is Ordering.RAW else Ordering.PER_STUDENT
    return EventLog(shifted, ordering)


def sort_chronological(log: EventLog) -> EventLog:
    """Stable sort by timestamp"""

    if log.ordering is Ordering.GLOBAL:
        return log
    return EventLog(tuple(sorted(log.events, key=attrgetter("timestamp_ms"))), Ordering.GLOBAL)


def temporal_slice(log: EventLog, start_fraction: float, end_fraction: float) -> TemporalSplit:
    """
    Take rows [floor(start*N), floor(end*N)) as test, and as train every
    earlier row of the students present in the test slice
    """

    window = validate_fraction_window(start_fraction, end_fraction)
    if not window:
        raise ParameterError(window.message)
    if log.ordering is not Ordering.GLOBAL:
        raise ParameterError("temporal_slice requires a globally chronological log")

    n = len(log)
    lo = math.floor(start_fraction * n)
    hi = math.floor(end_fraction * n)
    if hi <= lo:
        raise ParameterError(f"empty slice: rows [{lo}, {hi}) of {n}")

    test = log.events[lo:hi]
    test_students = {event.student_id for event in test}
    train = tuple(event for event in log.events[:lo] if event.student_id in test_students)
    return TemporalSplit(
        train=EventLog(train, Ordering.GLOBAL),
        test=EventLog(test, Ordering.GLOBAL),
        slice_start_fraction=start_fraction,
        slice_end_fraction=end_fraction,
    )


def audit_split(split: TemporalSplit, source: EventLog | None = None) -> list[str]:
    """Every TemporalSplit invariant violation; empty when the split is valid"""

    violations: list[str] = []
    first_test: dict[str, int] = {}
    previous = None
    for event in split.test:
        first_test.setdefault(event.student_id, event.timestamp_ms)
        if previous is not None and event.timestamp_ms < previous:
            violations.append(f"test not chronological at {event.student_id}@{event.timestamp_ms}")
        previous = event.timestamp_ms

    for event in split.train:
        first = first_test.get(event.student_id)
        if first is None:
            violations.append(f"train student {event.student_id} absent from test")
        elif event.timestamp_ms >= first:
            violations.append(
                f"train event {event.student_id}@{event.timestamp_ms} not before first test event {first}"
            )

    if source is not None:
        n = len(source)
        lo = math.floor(split.slice_start_fraction * n)
        hi = math.floor(split.slice_end_fraction * n)
        if source.events[lo:hi] != split.test.events:
            violations.append("test is not the contiguous row slice of the source")

    return violations


def sample_users(log: EventLog, n: int, seed: int) -> EventLog:
    """Keep the events of min(n, #students) uniformly sampled students"""

    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    students = log.students()
    if n >= len(students):
        return log

    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(np.array(students, dtype=object), size=n, replace=False).tolist())
    return EventLog(tuple(e for e in log if e.student_id in chosen), log.ordering)
