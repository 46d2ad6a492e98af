"""
Event-log domain records
"""

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum

from pydantic import BaseModel, Field

from src.utils.validators import validate_event_fields


class EventKind(str, Enum):
    """Interaction event kinds"""
    QUESTION = "question"
    LECTURE = "lecture"


class Ordering(str, Enum):
    """Known ordering of an EventLog"""
    RAW = "raw"
    PER_STUDENT = "per_student_chronological"
    GLOBAL = "globally_chronological"


@dataclass(frozen=True, slots=True)
class InteractionEvent:
    """One timestamped student-item interaction"""

    student_id: str
    item_id: str
    event_kind: EventKind
    part: int
    tags: tuple[int, ...]
    timestamp_ms: int
    correct: bool | None = None
    trial_duration_ms: int | None = None
    had_prior_explanation: bool | None = None

    def __post_init__(self) -> None:
        result = validate_event_fields(
            self.event_kind is EventKind.QUESTION,
            self.part,
            self.tags,
            self.correct,
            self.trial_duration_ms,
        )
        if not result:
            raise ValueError(result.message)

    @property
    def is_question(self) -> bool:
        return self.event_kind is EventKind.QUESTION

    def shifted(self, offset_ms: int) -> "InteractionEvent":
        """Same event moved offset_ms later"""
        return InteractionEvent(
            self.student_id,
            self.item_id,
            self.event_kind,
            self.part,
            self.tags,
            self.timestamp_ms + offset_ms,
            self.correct,
            self.trial_duration_ms,
            self.had_prior_explanation,
        )


@dataclass(frozen=True)
class EventLog:
    """Immutable sequence of events with its known ordering"""

    events: tuple[InteractionEvent, ...]
    ordering: Ordering = Ordering.RAW

    def __post_init__(self) -> None:
        if self.ordering is Ordering.GLOBAL:
            previous = None
            for event in self.events:
                if previous is not None and event.timestamp_ms < previous:
                    raise ValueError("globally chronological log with decreasing timestamps")
                previous = event.timestamp_ms

    @classmethod
    def of(cls, events: Sequence[InteractionEvent], ordering: Ordering = Ordering.RAW) -> "EventLog":
        return cls(tuple(events), ordering)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[InteractionEvent]:
        return iter(self.events)

    def students(self) -> list[str]:
        """Distinct student ids in sorted order"""
        return sorted({event.student_id for event in self.events})

    def questions(self) -> Iterator[InteractionEvent]:
        return (event for event in self.events if event.is_question)


@dataclass(frozen=True)
class TemporalSplit:
    """Test slice of the global order plus the backfilled history of its students"""

    train: EventLog
    test: EventLog
    slice_start_fraction: float
    slice_end_fraction: float


@dataclass(frozen=True, slots=True)
class RowIssue:
    """A malformed input row"""

    row: int
    message: str
    fatal: bool = False


@dataclass
class IngestReport:
    """Outcome of parsing a delimited event file"""

    rows_read: int = 0
    events_kept: int = 0
    tie_bumps: int = 0
    issues: list[RowIssue] = field(default_factory=list)

    @property
    def bad_rows(self) -> int:
        return len(self.issues)

    def to_dict(self) -> dict[str, object]:
        return {
            "rows_read": self.rows_read,
            "events_kept": self.events_kept,
            "bad_rows": self.bad_rows,
            "tie_bumps": self.tie_bumps,
            "issues": [
                {"row": issue.row, "message": issue.message, "fatal": issue.fatal}
                for issue in self.issues
            ],
        }


class SchemaMapping(BaseModel):
    """Maps engine roles onto the column names of an input file"""

    name: str = "default"
    student: str = "student_id"
    item: str = "item_id"
    timestamp: str = "timestamp_ms"
    part: str = "part"
    tags: str = "tags"
    correct: str = "correct"
    kind: str | None = "event_kind"
    duration: str | None = "trial_duration_ms"
    explanation: str | None = "had_prior_explanation"
    question_token: str = "question"
    lecture_token: str = "lecture"
    delimiter: str = Field(default=",", min_length=1, max_length=1)

    def required_columns(self) -> list[str]:
        return [self.student, self.item, self.timestamp, self.part, self.tags, self.correct]


SCHEMA_PRESETS: dict[str, SchemaMapping] = {
    "default": SchemaMapping(),
    "ednet": SchemaMapping(
        name="ednet",
        student="user_id",
        item="content_id",
        timestamp="timestamp",
        part="part",
        tags="tags",
        correct="answered_correctly",
        kind="content_type_id",
        duration="prior_question_elapsed_time",
        explanation="prior_question_had_explanation",
        question_token="0",
        lecture_token="1",
    ),
}
