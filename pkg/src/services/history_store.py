"""
Versioned binary snapshots of per-student histories
"""

from collections.abc import Mapping
from pathlib import Path

import numpy as np

from src.models.features import TagCombo
from src.models.history import StudentHistory, UnitState
from src.utils.binio import pack_strings, read_container, unpack_strings, write_container
from src.utils.errors import DataError

HISTORY_MAGIC = b"LKTHIST"
HISTORY_VERSION = 1

_OVERALL, _ITEM, _PART, _COMBO, _CLUSTER = range(5)


def _unit_rows(history: StudentHistory) -> list[tuple[int, str, UnitState]]:
    rows = [(_OVERALL, "", history.overall)]
    rows += [(_ITEM, key, unit) for key, unit in history.items.items()]
    rows += [(_PART, str(key), unit) for key, unit in history.parts.items()]
    rows += [(_COMBO, key.key, unit) for key, unit in history.combos.items()]
    rows += [(_CLUSTER, str(key), unit) for key, unit in history.clusters.items()]
    return rows


def save_histories(histories: Mapping[str, StudentHistory], path: Path | str) -> None:
    """Write every student's history, students in sorted order"""

    students = sorted(histories)
    units = [
        (position, level, key, unit)
        for position, student in enumerate(students)
        for level, key, unit in _unit_rows(histories[student])
    ]
    weights = sorted({w for *_, unit in units for w in unit.weighted})
    weighted = np.full((len(units), len(weights)), np.nan)
    for row, (*_, unit) in enumerate(units):
        for column, w in enumerate(weights):
            if w in unit.weighted:
                weighted[row, column] = unit.weighted[w]

    student_buf, student_off = pack_strings(students)
    key_buf, key_off = pack_strings([key for _, _, key, _ in units])
    per_student = [histories[s] for s in students]
    arrays = {
        "student_buf": student_buf,
        "student_off": student_off,
        "lecture_count": np.array([h.lecture_count for h in per_student], dtype=np.int64),
        "errordec_state": np.array([h.errordec_state for h in per_student], dtype=np.float64),
        "prediction_count": np.array([h.prediction_count for h in per_student], dtype=np.int64),
        "has_last_event": np.array([h.last_event_ms is not None for h in per_student], dtype=np.int8),
        "last_event_ms": np.array([h.last_event_ms or 0 for h in per_student], dtype=np.int64),
        "unit_student": np.array([u[0] for u in units], dtype=np.int64),
        "unit_level": np.array([u[1] for u in units], dtype=np.int8),
        "key_buf": key_buf,
        "key_off": key_off,
        "attempts": np.array([u[3].attempts for u in units], dtype=np.int64),
        "successes": np.array([u[3].successes for u in units], dtype=np.int64),
        "failures": np.array([u[3].failures for u in units], dtype=np.int64),
        "has_last_time": np.array([u[3].last_time_ms is not None for u in units], dtype=np.int8),
        "last_time_ms": np.array([u[3].last_time_ms or 0 for u in units], dtype=np.int64),
        "weighted": weighted,
    }
    write_container(Path(path), HISTORY_MAGIC, HISTORY_VERSION, {"weights": weights}, arrays)


def load_histories(path: Path | str) -> dict[str, StudentHistory]:
    """Read a history snapshot written by save_histories"""

    header, arrays = read_container(Path(path), HISTORY_MAGIC, {HISTORY_VERSION})
    try:
        students = unpack_strings(arrays["student_buf"], arrays["student_off"])
        keys = unpack_strings(arrays["key_buf"], arrays["key_off"])
        weights = [float(w) for w in header["weights"]]

        histories: dict[str, StudentHistory] = {}
        for position, student in enumerate(students):
            histories[student] = StudentHistory(
                lecture_count=int(arrays["lecture_count"][position]),
                errordec_state=float(arrays["errordec_state"][position]),
                prediction_count=int(arrays["prediction_count"][position]),
                last_event_ms=(
                    int(arrays["last_event_ms"][position]) if arrays["has_last_event"][position] else None
                ),
            )

        for row, key in enumerate(keys):
            history = histories[students[int(arrays["unit_student"][row])]]
            unit = UnitState(
                attempts=int(arrays["attempts"][row]),
                successes=int(arrays["successes"][row]),
                failures=int(arrays["failures"][row]),
                last_time_ms=int(arrays["last_time_ms"][row]) if arrays["has_last_time"][row] else None,
                weighted={
                    w: float(value)
                    for w, value in zip(weights, arrays["weighted"][row].tolist(), strict=True)
                    if not np.isnan(value)
                },
            )
            level = int(arrays["unit_level"][row])
            if level == _OVERALL:
                history.overall = unit
            elif level == _ITEM:
                history.items[key] = unit
            elif level == _PART:
                history.parts[int(key)] = unit
            elif level == _COMBO:
                history.combos[TagCombo.parse(key)] = unit
            else:
                history.clusters[int(key)] = unit
    except (KeyError, IndexError, ValueError) as e:
        raise DataError(f"{path}: inconsistent history snapshot: {e}") from e
    return histories
