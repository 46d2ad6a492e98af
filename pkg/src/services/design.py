"""
Design matrix construction

build_catalog dimensions the sparse matrix from the training log. vectorize
streams (row, label) pairs through the feature engine. DesignTemplate makes
one such pass, keeps the parameter-free values and the raw inputs of every
nonlinear column, and rebuilds the CSR matrix for any parameter values
without touching the log again.
"""

import logging
import math
from array import array
from collections import Counter
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from src.config import settings
from src.models.catalog import ColumnCatalog, fallback_key
from src.models.clustering import UNASSIGNED_CLUSTER, ClusterModel
from src.models.events import EventLog
from src.models.features import FeatureKind, FeatureLevel, FeatureSpec
from src.models.history import HistoryParams, StudentHistory
from src.services.features import (
    MINUTE_MS,
    SparseRow,
    apply_event,
    canonical_combo,
    crisp_cluster,
    featurize,
    instance_key,
    level_unit,
)
from src.utils.errors import ParameterError
from src.utils.logging import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()

_PARTS = range(1, 8)


def build_catalog(
    train: EventLog,
    spec: FeatureSpec,
    clusters: ClusterModel | None = None,
    min_occurrence: int | None = None,
) -> ColumnCatalog:
    """
    Assign a column to every shared descriptor and every admitted instance

    An instance is admitted when it occurs in more than min_occurrence
    question events (the descriptor's own threshold wins over the argument,
    which defaults to settings.min_occurrence). Per descriptor the fallback
    columns come first, then admitted instances sorted by key.

    Raises:
        ParameterError: Empty spec, or cluster features without a cluster model
    """

    if not spec.descriptors:
        raise ParameterError("feature spec has no descriptors")
    if spec.uses_clusters and clusters is None:
        raise ParameterError(f"spec '{spec.name}' reads cluster history but no cluster model was given")

    default_threshold = settings.min_occurrence if min_occurrence is None else min_occurrence
    levels = {d.level for d in spec.descriptors if d.instance_based}
    counts: dict[FeatureLevel, Counter[str]] = {level: Counter() for level in levels}

    for event in train.questions():
        combo = canonical_combo(event)
        cluster = crisp_cluster(clusters, combo)
        for level in levels:
            if level is FeatureLevel.CLUSTER and cluster == UNASSIGNED_CLUSTER:
                continue
            counts[level][instance_key(level, event, combo, cluster)] += 1

    shared: dict[int, int] = {}
    instances: dict[tuple[int, str], int] = {}
    fallbacks: dict[tuple[int, str], int] = {}
    names: list[str] = []

    for index, descriptor in enumerate(spec.descriptors):
        if not descriptor.instance_based:
            shared[index] = len(names)
            names.append(descriptor.name)
            continue

        if descriptor.fallback:
            if descriptor.level is FeatureLevel.TAG_COMBO:
                keys = [fallback_key(descriptor.level, part) for part in _PARTS]
            else:
                keys = [fallback_key(descriptor.level, 0)]
            for key in keys:
                fallbacks[(index, key)] = len(names)
                names.append(f"{descriptor.name}[{key}]")

        threshold = default_threshold if descriptor.min_occurrence is None else descriptor.min_occurrence
        admitted = sorted(key for key, n in counts[descriptor.level].items() if n > threshold)
        for key in admitted:
            instances[(index, key)] = len(names)
            names.append(f"{descriptor.name}[{key}]")

    logger.info(f"Catalog for '{spec.name}': {len(names)} columns from {len(spec.descriptors)} descriptors")
    return ColumnCatalog(shared, instances, fallbacks, tuple(names), clusters)


def vectorize(
    train: EventLog,
    spec: FeatureSpec,
    catalog: ColumnCatalog,
    errordec_predictions: Sequence[float] | None = None,
) -> Iterator[tuple[SparseRow, int]]:
    """
    Stream one (sparse row, label) pair per question event

    errordec_predictions, when given, holds one prediction per question in
    stream order and is fed to each student's errordec state after the row
    has been produced.
    """

    params = HistoryParams.from_spec(spec, catalog.clusters)
    histories: dict[str, StudentHistory] = {}
    question = 0
    for event in train:
        history = histories.setdefault(event.student_id, StudentHistory())
        if not event.is_question:
            apply_event(history, event, None, params)
            continue
        row = featurize(history, event, spec, catalog)
        yield row, int(bool(event.correct))
        prediction = None if errordec_predictions is None else errordec_predictions[question]
        apply_event(history, event, prediction, params)
        question += 1


def recency_column(minutes: np.ndarray, d: float) -> np.ndarray:
    """Recency values from clamped elapsed minutes (NaN marks no prior practice)"""

    values = np.zeros_like(minutes)
    seen = ~np.isnan(minutes)
    values[seen] = np.power(minutes[seen], -d)
    return values


def weighted_count_column(attempts: np.ndarray, w: float) -> np.ndarray:
    """Recency-weighted counts from plain attempt counts"""

    if w == 1.0:
        return attempts.astype(np.float64)
    return (1.0 - np.power(w, attempts)) / (1.0 - w)


def errordec_column(students: np.ndarray, errors: np.ndarray, dec: float) -> np.ndarray:
    """
    Per-row errordec state from each student's signed-error stream

    Row r sees the decayed mean of the errors of that student's earlier rows.
    """

    values = np.empty(len(errors), dtype=np.float64)
    state: dict[int, float] = {}
    for row, (student, error) in enumerate(zip(students.tolist(), errors.tolist(), strict=True)):
        current = state.get(student, 0.0)
        values[row] = current
        state[student] = dec * current + (1.0 - dec) * error
    return values


@dataclass(frozen=True)
class DesignTemplate:
    """
    Parameter-free design matrix skeleton

    Every row holds exactly one entry per descriptor, so the column indices
    form a dense (rows x descriptors) block.
    """

    spec: FeatureSpec
    catalog: ColumnCatalog
    labels: np.ndarray
    students: np.ndarray
    columns: np.ndarray
    values: np.ndarray
    minutes: dict[int, np.ndarray]
    attempts: dict[int, np.ndarray]

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def materialize(self, spec: FeatureSpec | None = None, errors: np.ndarray | None = None) -> sparse.csr_matrix:
        """
        CSR matrix for the nonlinear parameters in spec

        errors is the per-row signed error (prediction - label) stream that
        feeds errordec; without it the errordec column is zero.
        """

        spec = spec or self.spec
        if [d.name for d in spec.descriptors] != [d.name for d in self.spec.descriptors]:
            raise ParameterError(f"spec '{spec.name}' does not match the template's descriptors")

        data = self.values.copy()
        for index, descriptor in enumerate(spec.descriptors):
            if descriptor.kind is FeatureKind.RECENCY:
                data[:, index] = recency_column(self.minutes[index], float(descriptor.d))  # type: ignore[arg-type]
            elif descriptor.kind is FeatureKind.RECENCY_WEIGHTED_COUNT:
                data[:, index] = weighted_count_column(self.attempts[index], float(descriptor.w))  # type: ignore[arg-type]
            elif descriptor.kind is FeatureKind.ERRORDEC and errors is not None:
                data[:, index] = errordec_column(self.students, errors, float(descriptor.dec))  # type: ignore[arg-type]

        width = len(spec.descriptors)
        indptr = np.arange(0, self.n_rows * width + 1, width, dtype=np.int64)
        return sparse.csr_matrix(
            (data.ravel(), self.columns.ravel(), indptr),
            shape=(self.n_rows, self.catalog.n_columns),
        )


def build_template(train: EventLog, spec: FeatureSpec, catalog: ColumnCatalog) -> DesignTemplate:
    """One streaming pass over train recording everything materialize needs"""

    width = len(spec.descriptors)
    recency = [i for i, d in enumerate(spec.descriptors) if d.kind is FeatureKind.RECENCY]
    weighted = [i for i, d in enumerate(spec.descriptors) if d.kind is FeatureKind.RECENCY_WEIGHTED_COUNT]

    params = HistoryParams(clusters=catalog.clusters)
    histories: dict[str, StudentHistory] = {}
    codes: dict[str, int] = {}
    columns = array("q")
    values = array("d")
    labels = array("b")
    students = array("q")
    minutes = {i: array("d") for i in recency}
    attempts = {i: array("q") for i in weighted}

    with perf_logger.timed("Featurize", spec=spec.name) as timing:
        for event in train:
            history = histories.setdefault(event.student_id, StudentHistory())
            if event.is_question:
                row = featurize(history, event, spec, catalog)
                combo = canonical_combo(event)
                cluster = crisp_cluster(catalog.clusters, combo)
                for index in recency:
                    unit = level_unit(history, spec.descriptors[index].level, event, combo, cluster)
                    last = unit.last_time_ms
                    minutes[index].append(
                        math.nan if last is None else max((event.timestamp_ms - last) / MINUTE_MS, 1.0)
                    )
                for index in weighted:
                    unit = level_unit(history, spec.descriptors[index].level, event, combo, cluster)
                    attempts[index].append(unit.attempts)
                for column, value in row:
                    columns.append(column)
                    values.append(value)
                labels.append(int(bool(event.correct)))
                students.append(codes.setdefault(event.student_id, len(codes)))
            apply_event(history, event, None, params)
        timing["rows"] = len(labels)
        timing["students"] = len(codes)

    return DesignTemplate(
        spec=spec,
        catalog=catalog,
        labels=np.array(labels, dtype=np.int8).astype(np.float64),
        students=np.array(students, dtype=np.int64),
        columns=np.array(columns, dtype=np.int64).reshape(-1, width),
        values=np.array(values, dtype=np.float64).reshape(-1, width),
        minutes={i: np.array(a, dtype=np.float64) for i, a in minutes.items()},
        attempts={i: np.array(a, dtype=np.int64) for i, a in attempts.items()},
    )
