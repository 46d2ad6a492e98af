"""
Streaming feature engine

Histories only ever see events strictly before the one being featurized.
featurize reads history; apply_event then folds the event in. The current
event's correctness is never read by featurize.
"""

import math

from src.models.catalog import ColumnCatalog
from src.models.clustering import UNASSIGNED_CLUSTER, ClusterModel
from src.models.events import InteractionEvent
from src.models.features import (
    UNIT_LEVELS,
    FeatureKind,
    FeatureLevel,
    FeatureSpec,
    Outcome,
    TagCombo,
)
from src.models.history import HistoryParams, StudentHistory, UnitState
from src.utils.errors import OrderingError

MINUTE_MS = 60_000

SparseRow = list[tuple[int, float]]

_EMPTY_UNIT = UnitState()


def canonical_combo(event: InteractionEvent) -> TagCombo:
    """Tag combination of an event, nested within its part"""
    return TagCombo(event.part, event.tags)


def crisp_cluster(clusters: ClusterModel | None, combo: TagCombo) -> int:
    if clusters is None:
        return UNASSIGNED_CLUSTER
    return clusters.crisp_of(combo)


def recency_value(now_ms: int, last_ms: int | None, d: float) -> float:
    """
    Power-decay recency: max(minutes elapsed, 1) ** -d, or 0 with no prior practice

    Raises:
        OrderingError: last_ms lies after now_ms
    """

    if last_ms is None:
        return 0.0
    if last_ms > now_ms:
        raise OrderingError(f"last practice at {last_ms} after current time {now_ms}")
    minutes = max((now_ms - last_ms) / MINUTE_MS, 1.0)
    return minutes ** (-d)


def update_recency_weighted_count(current: float, w: float) -> float:
    """One more attempt on a geometrically down-weighted count"""
    return w * current + 1.0


def update_errordec(state: float, prediction: float, outcome: int, dec: float) -> float:
    """Exponentially decaying mean of signed errors (prediction - outcome)"""
    return dec * state + (1.0 - dec) * (prediction - outcome)


def _units(
    history: StudentHistory, event: InteractionEvent, combo: TagCombo, cluster: int | None
) -> list[UnitState]:
    units = [
        history.overall,
        history.items.setdefault(event.item_id, UnitState()),
        history.parts.setdefault(event.part, UnitState()),
        history.combos.setdefault(combo, UnitState()),
    ]
    if cluster is not None:
        units.append(history.clusters.setdefault(cluster, UnitState()))
    return units


def level_unit(
    history: StudentHistory, level: FeatureLevel, event: InteractionEvent, combo: TagCombo, cluster: int
) -> UnitState:
    """Read-only view of the unit a level refers to (empty when never practiced)"""

    if level is FeatureLevel.STUDENT:
        return history.overall
    if level is FeatureLevel.ITEM:
        return history.items.get(event.item_id, _EMPTY_UNIT)
    if level is FeatureLevel.PART:
        return history.parts.get(event.part, _EMPTY_UNIT)
    if level is FeatureLevel.TAG_COMBO:
        return history.combos.get(combo, _EMPTY_UNIT)
    if level is FeatureLevel.CLUSTER:
        return history.clusters.get(cluster, _EMPTY_UNIT)
    raise ValueError(f"level {level.value} has no unit table")


def instance_key(level: FeatureLevel, event: InteractionEvent, combo: TagCombo, cluster: int) -> str:
    """Catalog instance key of an event at a level"""

    if level is FeatureLevel.ITEM:
        return event.item_id
    if level is FeatureLevel.STUDENT:
        return event.student_id
    if level is FeatureLevel.PART:
        return str(event.part)
    if level is FeatureLevel.TAG_COMBO:
        return combo.key
    if level is FeatureLevel.CLUSTER:
        return str(cluster)
    return ""


def count_value(history: StudentHistory, level: FeatureLevel, outcome: Outcome, unit: UnitState | None) -> int:
    if level is FeatureLevel.LECTURE:
        return history.lecture_count
    if level is FeatureLevel.OVERALL_SUCCESS:
        return history.overall.successes
    if level is FeatureLevel.OVERALL_FAILURE:
        return history.overall.failures
    assert unit is not None
    if outcome is Outcome.SUCCESS:
        return unit.successes
    if outcome is Outcome.FAILURE:
        return unit.failures
    return unit.attempts


def featurize(
    history: StudentHistory,
    event: InteractionEvent,
    spec: FeatureSpec,
    catalog: ColumnCatalog,
) -> SparseRow:
    """
    Sparse feature row for event from the student's prior history

    One (column, value) entry per descriptor, in descriptor order.

    Raises:
        CatalogError: Unknown instance and no fallback configured
        OrderingError: History contains practice after the event
    """

    combo = canonical_combo(event)
    cluster = crisp_cluster(catalog.clusters, combo)
    now = event.timestamp_ms
    row: SparseRow = []

    for index, descriptor in enumerate(spec.descriptors):
        kind, level = descriptor.kind, descriptor.level
        key = instance_key(level, event, combo, cluster) if descriptor.instance_based else ""
        column = catalog.column(index, descriptor, key, event.part)
        unit = level_unit(history, level, event, combo, cluster) if level in UNIT_LEVELS else None

        if kind is FeatureKind.INTERCEPT:
            value = 1.0
        elif kind is FeatureKind.COUNT:
            value = float(count_value(history, level, descriptor.outcome, unit))
        elif kind is FeatureKind.LOG_COUNT:
            value = math.log1p(count_value(history, level, descriptor.outcome, unit))
        elif kind is FeatureKind.RECENCY:
            value = recency_value(now, unit.last_time_ms, descriptor.d)  # type: ignore[union-attr,arg-type]
        elif kind is FeatureKind.RECENCY_WEIGHTED_COUNT:
            value = unit.weighted.get(descriptor.w, 0.0)  # type: ignore[union-attr,arg-type]
        else:
            value = history.errordec_state
        row.append((column, value))

    return row


def apply_event(
    history: StudentHistory,
    event: InteractionEvent,
    prediction: float | None = None,
    params: HistoryParams | None = None,
    *,
    reveal: bool = True,
) -> StudentHistory:
    """
    Fold the student's next event into history (in place; returns history)

    Lectures only advance lecture_count. Questions advance attempts, last
    times and weighted counts at every level; with reveal the outcome is
    applied as well (see apply_outcome).

    Raises:
        OrderingError: The event is earlier than the last one applied
    """

    params = params or _DEFAULT_PARAMS
    if history.last_event_ms is not None and event.timestamp_ms < history.last_event_ms:
        raise OrderingError(
            f"event at {event.timestamp_ms} precedes last applied event at {history.last_event_ms}"
        )
    history.last_event_ms = event.timestamp_ms

    if not event.is_question:
        history.lecture_count += 1
        return history

    combo = canonical_combo(event)
    cluster = None if params.clusters is None else params.clusters.crisp_of(combo)
    for unit in _units(history, event, combo, cluster):
        unit.attempts += 1
        unit.last_time_ms = event.timestamp_ms
        for w in params.weights:
            unit.weighted[w] = update_recency_weighted_count(unit.weighted.get(w, 0.0), w)

    if reveal:
        apply_outcome(history, event, prediction, params)
    return history


def apply_outcome(
    history: StudentHistory,
    event: InteractionEvent,
    prediction: float | None = None,
    params: HistoryParams | None = None,
) -> StudentHistory:
    """Apply the correctness-dependent part of a question event"""

    if not event.is_question:
        return history
    params = params or _DEFAULT_PARAMS
    combo = canonical_combo(event)
    cluster = None if params.clusters is None else params.clusters.crisp_of(combo)
    for unit in _units(history, event, combo, cluster):
        if event.correct:
            unit.successes += 1
        else:
            unit.failures += 1

    if prediction is not None:
        history.errordec_state = update_errordec(
            history.errordec_state, prediction, int(bool(event.correct)), params.dec
        )
        history.prediction_count += 1
    return history


_DEFAULT_PARAMS = HistoryParams()
