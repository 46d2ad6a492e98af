"""
Input validation utilities for event logs and engine parameters
"""

import math

PART_RANGE = range(1, 8)

_TRUE_TOKENS = frozenset({"1", "true", "True", "TRUE", "t", "T", "yes"})
_FALSE_TOKENS = frozenset({"0", "false", "False", "FALSE", "f", "F", "no"})


class ValidationResult:
    """Validation result with success status and message"""

    def __init__(self, is_valid: bool, message: str = "") -> None:
        self.is_valid = is_valid
        self.message = message

    def __bool__(self) -> bool:
        return self.is_valid


def validate_event_fields(
    is_question: bool,
    part: int,
    tags: tuple[int, ...],
    correct: bool | None,
    trial_duration_ms: int | None,
) -> ValidationResult:
    """
    Validates the invariants of a single interaction event

    Rules:
    - part in 1..7
    - tags strictly increasing, non-negative
    - question events carry correctness; lecture events never do
    - durations non-negative
    """

    if part not in PART_RANGE:
        return ValidationResult(False, f"part {part} outside 1..7")

    for index, tag in enumerate(tags):
        if tag < 0:
            return ValidationResult(False, f"negative tag {tag}")
        if index and tags[index - 1] >= tag:
            return ValidationResult(False, "tags not in canonical increasing order")

    if is_question and correct is None:
        return ValidationResult(False, "question event without correctness")
    if not is_question and correct is not None:
        return ValidationResult(False, "lecture event with correctness")

    if trial_duration_ms is not None and trial_duration_ms < 0:
        return ValidationResult(False, f"negative duration {trial_duration_ms}")

    return ValidationResult(True, "Valid")


def parse_int(text: str, field: str) -> int:
    """Parse an integer field, accepting integral float spellings like '12.0'"""

    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{field} is not numeric: {text!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise ValueError(f"{field} is not an integer: {text!r}")
    return int(value)


def parse_optional_int(text: str, field: str) -> int | None:
    """Parse an integer field where an empty cell means absent"""

    if not text.strip():
        return None
    return parse_int(text, field)


def parse_optional_bool(text: str, field: str) -> bool | None:
    """Parse a boolean cell; empty or -1 means absent"""

    text = text.strip()
    if not text or text == "-1":
        return None
    if text in _TRUE_TOKENS:
        return True
    if text in _FALSE_TOKENS:
        return False
    raise ValueError(f"{field} is not a boolean: {text!r}")


def canonical_tags(text: str) -> tuple[int, ...]:
    """Parse a space-separated tag list into canonical (sorted, unique) order"""

    text = text.strip()
    if not text:
        return ()
    return tuple(sorted({parse_int(token, "tags") for token in text.split()}))


def validate_fraction_window(start: float, end: float) -> ValidationResult:
    """Validate a [start, end) row-fraction window"""

    if not (0.0 <= start < end <= 1.0):
        return ValidationResult(
            False, f"fractions must satisfy 0 <= start < end <= 1, got {start}, {end}"
        )
    return ValidationResult(True, "Valid")
