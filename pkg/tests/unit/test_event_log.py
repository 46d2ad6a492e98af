"""
Unit tests for event-log ingestion, ordering and temporal splitting
"""

import io
import random

import pytest

from src.models.events import EventKind, EventLog, Ordering
from src.services.event_log import (
    assign_simulated_offsets,
    audit_split,
    events_to_text,
    load_cache,
    parse_events,
    sample_users,
    save_cache,
    sort_chronological,
    temporal_slice,
)
from src.utils.errors import DataError, ParameterError, RowLimitError, SchemaError
from tests.factories import MINUTE, global_log, lecture, question, random_log

pytestmark = pytest.mark.unit

HEADER = "student_id,item_id,event_kind,part,tags,timestamp_ms,correct,trial_duration_ms,had_prior_explanation\n"


def csv_of(*rows):
    return io.StringIO(HEADER + "".join(row + "\n" for row in rows))


class TestParseEvents:
    """Unit tests for delimited input parsing"""

    def test_parse_valid_rows(self):
        """Test that well-formed rows become events with canonical tags"""

        log, report = parse_events(
            csv_of(
                "u1,q1,question,3,302 301,1000,1,15000,0",
                "u1,l1,lecture,3,,2000,,,",
                "u2,q2,question,5,501,1500,0,,1",
            )
        )

        assert log.ordering is Ordering.RAW
        assert len(log) == 3
        assert report.rows_read == 3
        assert report.bad_rows == 0
        first = log.events[0]
        assert first.tags == (301, 302)
        assert first.correct is True
        assert first.trial_duration_ms == 15000
        assert log.events[1].event_kind is EventKind.LECTURE
        assert log.events[1].correct is None
        assert log.events[2].had_prior_explanation is True

    def test_missing_column_is_schema_error(self):
        """Test that a missing required column aborts the parse"""

        with pytest.raises(SchemaError):
            parse_events(io.StringIO("student_id,item_id,part,tags,timestamp_ms\nu1,q1,1,,5\n"))

    def test_invariant_violations_are_reported_and_excluded(self):
        """Test that bad rows are listed in the report without aborting"""

        rows = [f"u{i % 7},q{i % 5},question,1,101,{1000 + i},1,," for i in range(98)]
        rows.insert(10, "u1,q1,question,9,101,5000,1,,")
        rows.insert(50, "u2,l1,lecture,1,,6000,1,,")
        log, report = parse_events(csv_of(*rows), max_bad_row_fraction=0.01)

        assert report.rows_read == 100
        assert report.bad_rows == 2
        assert sorted(issue.row for issue in report.issues) == [10, 50]
        assert len(log) == 98

    def test_unparseable_rows_over_limit(self):
        """Test that too many unparseable rows raise RowLimitError"""

        rows = [f"u1,q1,question,1,101,{1000 + i},1,," for i in range(10)]
        rows.append("u1,q1,question,1,101,not-a-time,1,,")
        with pytest.raises(RowLimitError):
            parse_events(csv_of(*rows), max_bad_row_fraction=0.01)

    def test_extra_field_row_is_a_fatal_issue(self):
        """Test that a row with too many fields is reported in place and the rest still parse"""

        rows = [f"u{i % 7},q{i % 5},question,1,101,{1000 + i},1,," for i in range(299)]
        rows.insert(120, "u1,q1,question,1,101,5000,1,,,surplus")
        log, report = parse_events(csv_of(*rows), max_bad_row_fraction=0.01)

        assert report.rows_read == 300
        assert len(log) == 299
        assert [(issue.row, issue.fatal) for issue in report.issues] == [(120, True)]
        assert report.issues[0].message == "expected 9 fields, saw 10"

    def test_small_chunks_parse_identically(self):
        """Test that reading a few rows at a time gives the same events and global row numbers"""

        rows = [f"u{i % 3},q{i % 4},question,1,101,{1000 + i},{i % 2},," for i in range(40)]
        rows[17] = "u1,q1,question,1,101,not-a-time,1,,"
        rows[31] = "u2,q2,question,1,101,9000,1,,,surplus"
        whole, whole_report = parse_events(csv_of(*rows), max_bad_row_fraction=0.1)
        chunked, chunked_report = parse_events(csv_of(*rows), max_bad_row_fraction=0.1, chunk_rows=7)

        assert chunked.events == whole.events
        assert chunked_report.rows_read == 40
        assert [issue.row for issue in chunked_report.issues] == [17, 31]
        assert chunked_report.to_dict() == whole_report.to_dict()

    def test_extra_field_rows_count_toward_limit(self):
        """Test that ragged rows beyond the tolerance raise RowLimitError"""

        rows = [f"u1,q1,question,1,101,{1000 + i},1,," for i in range(20)]
        rows.append("u1,q1,question,1,101,9000,1,,,surplus,more")
        with pytest.raises(RowLimitError, match="expected 9 fields, saw 11"):
            parse_events(csv_of(*rows), max_bad_row_fraction=0.01)

    def test_invalid_utf8_is_data_error(self):
        """Test that undecodable bytes abort as a data error"""

        data = (HEADER + "u1,q1,question,1,101,1000,1,,\nu\xff,q1,question,1,101,2000,1,,\n").encode("latin-1")
        with pytest.raises(DataError, match="UTF-8"):
            parse_events(io.BytesIO(data))

    def test_tie_breaking_bumps_later_rows(self):
        """Test that equal per-student timestamps become strictly increasing in file order"""

        log, report = parse_events(
            csv_of(
                "u1,q1,question,1,101,1000,1,,",
                "u1,q2,question,1,101,1000,0,,",
                "u1,q3,question,1,101,1001,1,,",
                "u2,q1,question,1,101,1000,1,,",
            )
        )

        stamps = {e.item_id: e.timestamp_ms for e in log if e.student_id == "u1"}
        assert stamps == {"q1": 1000, "q2": 1001, "q3": 1002}
        assert report.tie_bumps == 2

    def test_missing_kind_column_means_questions(self):
        """Test that a file without an event kind column holds only questions"""

        text = "student_id,item_id,part,tags,timestamp_ms,correct\nu1,q1,2,201,10,1\n"
        log, _ = parse_events(io.StringIO(text))
        assert log.events[0].is_question

    def test_ednet_preset(self):
        """Test the EdNet-style column preset"""

        text = (
            "user_id,content_id,content_type_id,part,tags,timestamp,answered_correctly\n"
            "7,100,0,4,12 11,0,1\n"
            "7,5,1,4,,10,-1\n"
        )
        log, report = parse_events(io.StringIO(text), "ednet")
        assert report.bad_rows == 0
        assert log.events[0].tags == (11, 12)
        assert log.events[1].event_kind is EventKind.LECTURE

    def test_unknown_schema_preset(self):
        """Test that an unknown preset name is a parameter error"""

        with pytest.raises(ParameterError):
            parse_events(csv_of(), "nonexistent")


class TestSerialization:
    """Unit tests for text and cache round trips"""

    def test_text_round_trip(self):
        """Test that written text parses back to the same events"""

        log = random_log(3, students=5)
        parsed, report = parse_events(io.StringIO(events_to_text(log)))
        assert report.bad_rows == 0
        assert sort_chronological(parsed).events == log.events

    def test_cache_is_byte_identical_on_resave(self, tmp_path):
        """Test that saving a loaded cache reproduces the file exactly"""

        log = random_log(4, students=8)
        first = tmp_path / "a.lktlog"
        second = tmp_path / "b.lktlog"
        save_cache(log, first)
        loaded = load_cache(first)
        save_cache(loaded, second)

        assert loaded.events == log.events
        assert loaded.ordering is Ordering.GLOBAL
        assert first.read_bytes() == second.read_bytes()


class TestOrdering:
    """Unit tests for offsets and chronological sorting"""

    def test_sort_is_stable(self):
        """Test that equal timestamps keep input order"""

        events = (question("b", "q1", 5), question("a", "q1", 5), question("c", "q1", 1))
        ordered = sort_chronological(EventLog(events, Ordering.RAW))
        assert [e.student_id for e in ordered] == ["c", "b", "a"]
        assert ordered.ordering is Ordering.GLOBAL

    def test_offsets_preserve_within_student_gaps(self):
        """Test that every student moves by one constant offset"""

        log = random_log(11, students=15)
        shifted = assign_simulated_offsets(log, horizon_ms=10 * 24 * 60 * MINUTE, seed=5)

        offsets = {}
        for before, after in zip(log, shifted, strict=True):
            offset = after.timestamp_ms - before.timestamp_ms
            assert 0 <= offset < 10 * 24 * 60 * MINUTE
            assert offsets.setdefault(before.student_id, offset) == offset

    def test_offsets_are_deterministic(self):
        """Test that the same seed gives the same offsets"""

        log = random_log(2)
        assert assign_simulated_offsets(log, 10**9, 1).events == assign_simulated_offsets(log, 10**9, 1).events

    def test_zero_horizon_rejected(self):
        """Test that a non-positive horizon is a parameter error"""

        with pytest.raises(ParameterError):
            assign_simulated_offsets(random_log(1), 0, 1)


class TestTemporalSlice:
    """Unit tests for the temporal split"""

    def test_slice_rows_and_backfill(self):
        """Test the slice bounds and that history holds only earlier rows of test students"""

        events = [question(f"s{i % 4}", "q1", 1000 * i) for i in range(20)]
        log = global_log(events)
        split = temporal_slice(log, 0.5, 0.6)

        assert split.test.events == log.events[10:12]
        assert {e.student_id for e in split.test} == {"s2", "s3"}
        assert all(e.student_id in {"s2", "s3"} and e.timestamp_ms < 10_000 for e in split.train)
        assert [e.timestamp_ms for e in split.train] == [2000, 3000, 6000, 7000]
        assert audit_split(split, log) == []

    def test_full_range_is_all_test(self):
        """Test that fractions 0 and 1 put every row in test"""

        log = random_log(8)
        split = temporal_slice(log, 0.0, 1.0)
        assert len(split.test) == len(log)
        assert len(split.train) == 0

    def test_invalid_windows(self):
        """Test that bad fractions and empty slices are rejected"""

        log = global_log([question("a", "q", t) for t in range(10)])
        with pytest.raises(ParameterError):
            temporal_slice(log, 0.6, 0.5)
        with pytest.raises(ParameterError):
            temporal_slice(log, 0.5, 0.55)
        with pytest.raises(ParameterError):
            temporal_slice(EventLog(log.events, Ordering.RAW), 0.0, 1.0)

    def test_split_invariants_on_random_logs(self):
        """Test that train precedes each test student's first test event, over many random logs"""

        rng = random.Random(0)
        for seed in range(1000):
            log = random_log(seed, students=rng.randint(1, 6), max_events=8, lecture_rate=0.2)
            log = sort_chronological(assign_simulated_offsets(log, 10**8, seed))
            start = rng.uniform(0.0, 0.9)
            end = rng.uniform(start + 0.1, 1.0)
            if int(end * len(log)) <= int(start * len(log)):
                continue
            split = temporal_slice(log, start, end)
            assert audit_split(split, log) == []

    def test_audit_finds_violations(self):
        """Test that a hand-broken split is reported"""

        log = global_log([question("a", "q", 10), question("a", "q", 20), question("b", "q", 30)])
        split = temporal_slice(log, 0.5, 1.0)
        broken = type(split)(
            train=global_log([*split.train.events, question("a", "q", 25), question("z", "q", 1)]),
            test=split.test,
            slice_start_fraction=0.5,
            slice_end_fraction=1.0,
        )
        violations = audit_split(broken)
        assert any("not before" in v for v in violations)
        assert any("absent from test" in v for v in violations)


class TestSampleUsers:
    """Unit tests for student sampling"""

    def test_keeps_whole_students(self):
        """Test that sampling keeps every event of the chosen students"""

        log = random_log(9, students=30)
        sampled = sample_users(log, 10, seed=3)
        chosen = set(sampled.students())

        assert len(chosen) == 10
        assert sampled.events == tuple(e for e in log if e.student_id in chosen)
        assert sample_users(log, 10, seed=3).events == sampled.events

    def test_more_than_available_keeps_all(self):
        """Test that asking for more students than exist returns the log"""

        log = global_log([question("a", "q", 1), lecture("b", "l", 2)])
        assert sample_users(log, 5, seed=0).events == log.events
