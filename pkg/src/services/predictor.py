"""
Prediction, batched delivery and model persistence
"""

import logging
import math
from collections.abc import Iterator, MutableMapping
from dataclasses import replace
from pathlib import Path
from typing import TextIO

import numpy as np

from src.config import settings
from src.models.catalog import ColumnCatalog
from src.models.clustering import ClusterModel
from src.models.events import EventLog, InteractionEvent, Ordering
from src.models.features import FeatureSpec, TagCombo
from src.models.history import StudentHistory
from src.models.model import DeliveryPolicy, FitDiagnostics, FittedModel, SearchPoint
from src.services.features import apply_event, apply_outcome, featurize
from src.utils.binio import pack_strings, read_container, unpack_strings, write_container
from src.utils.errors import CatalogError, DataError, ModelError, ParameterError

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"LKTMODEL"
MODEL_VERSION = 1

_SHARED, _INSTANCE, _FALLBACK = 0, 1, 2

Histories = MutableMapping[str, StudentHistory]


def predict(model: FittedModel, history: StudentHistory, event: InteractionEvent) -> float:
    """
    logistic(bias + beta . featurize(history, event)), clamped to [c, 1 - c]

    The dot product is summed exactly, so the order of row entries does not
    matter.

    Raises:
        ModelError: The model's catalog cannot represent the event
    """

    try:
        row = featurize(history, event, model.spec, model.catalog)
    except CatalogError as e:
        raise ModelError(f"catalog mismatch: {e}") from e
    return linear_predictor(model, row)


def linear_predictor(model: FittedModel, row: list[tuple[int, float]]) -> float:
    coefficients = model.coefficients
    if any(column >= len(coefficients) for column, _ in row):
        raise ModelError(f"row references a column beyond {len(coefficients)} coefficients")
    z = math.fsum([model.bias, *(float(coefficients[column]) * value for column, value in row)])
    clamp = settings.prediction_clamp
    return min(max(_logistic(z), clamp), 1.0 - clamp)


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def batched_predict(
    model: FittedModel,
    histories: Histories,
    batch: EventLog,
    policy: DeliveryPolicy = DeliveryPolicy.WITHHELD,
) -> list[float]:
    """
    Predict every question in a time-ordered batch

    Under WITHHELD, in-batch events advance counts and times as they happen
    but outcomes (and errordec) only apply when the batch's labels are
    released at its end. Under IMMEDIATE each trial is fully applied before
    the next one is predicted.
    """

    params = model.history_params
    predictions: list[float] = []
    pending: list[tuple[StudentHistory, InteractionEvent, float]] = []

    for event in batch:
        history = histories.setdefault(event.student_id, StudentHistory())
        if not event.is_question:
            apply_event(history, event, None, params)
            continue
        p = predict(model, history, event)
        predictions.append(p)
        if policy is DeliveryPolicy.IMMEDIATE:
            apply_event(history, event, p, params)
        else:
            apply_event(history, event, None, params, reveal=False)
            pending.append((history, event, p))

    for history, event, p in pending:
        apply_outcome(history, event, p, params)
    return predictions


def iter_batches(log: EventLog, batch_size: int) -> Iterator[EventLog]:
    if batch_size < 1:
        raise ParameterError(f"batch size must be at least 1, got {batch_size}")
    for start in range(0, len(log), batch_size):
        yield EventLog(log.events[start : start + batch_size], log.ordering)


def predict_log(
    model: FittedModel,
    log: EventLog,
    histories: Histories | None = None,
    batch_size: int = 1,
    policy: DeliveryPolicy = DeliveryPolicy.WITHHELD,
) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and labels for every question of log, delivered in batches"""

    histories = {} if histories is None else histories
    predictions: list[float] = []
    for batch in iter_batches(log, batch_size):
        predictions.extend(batched_predict(model, histories, batch, policy))
    labels = [int(bool(e.correct)) for e in log.questions()]
    return np.array(predictions, dtype=np.float64), np.array(labels, dtype=np.int8)


def warm_up(model: FittedModel, history_log: EventLog, histories: Histories | None = None) -> Histories:
    """
    Stream earlier events through histories, predicting as they go

    Used to backfill test students' histories from their training events so
    that every feature, errordec included, starts from the right state.
    """

    histories = {} if histories is None else histories
    params = model.history_params
    for event in history_log:
        history = histories.setdefault(event.student_id, StudentHistory())
        prediction = predict(model, history, event) if event.is_question else None
        apply_event(history, event, prediction, params)
    return histories


def scale_intercepts(model: FittedModel, factor: float) -> FittedModel:
    """
    Experimental: multiply every intercept coefficient by factor

    Meant for shrinking training-set intercepts toward zero when a simulated
    test set differs from the training population. Untested as a modeling
    choice; exposed for experiments only.
    """

    if not factor >= 0:
        raise ParameterError(f"intercept scale must be non-negative, got {factor}")
    coefficients = np.array(model.coefficients)
    columns = model.intercept_columns()
    coefficients[columns] *= factor
    logger.warning(f"Experimental intercept scaling by {factor} applied to {len(columns)} columns")
    return replace(model, coefficients=coefficients)


def save_model(model: FittedModel, path: Path | str) -> None:
    """Write the versioned binary model file"""

    catalog = model.catalog
    owner = np.zeros(catalog.n_columns, dtype=np.int32)
    role = np.zeros(catalog.n_columns, dtype=np.int8)
    keys = [""] * catalog.n_columns
    for index, column in catalog.shared.items():
        owner[column], role[column] = index, _SHARED
    for (index, key), column in catalog.instances.items():
        owner[column], role[column], keys[column] = index, _INSTANCE, key
    for (index, key), column in catalog.fallbacks.items():
        owner[column], role[column], keys[column] = index, _FALLBACK, key
    key_buf, key_off = pack_strings(keys)

    arrays = {
        "coefficients": np.asarray(model.coefficients, dtype=np.float64),
        "column_owner": owner,
        "column_role": role,
        "key_buf": key_buf,
        "key_off": key_off,
    }
    header = {
        "spec": model.spec.model_dump(mode="json"),
        "bias": model.bias,
        "names": list(catalog.names),
        "diagnostics": model.diagnostics.to_dict(),
        "clusters": None,
    }
    clusters = catalog.clusters
    if clusters is not None:
        combo_buf, combo_off = pack_strings([combo.key for combo in clusters.combos])
        arrays |= {"membership": clusters.membership, "combo_buf": combo_buf, "combo_off": combo_off}
        header["clusters"] = {
            "objective_history": list(clusters.objective_history),
            "iterations": clusters.iterations,
        }
    write_container(Path(path), MODEL_MAGIC, MODEL_VERSION, header, arrays)


def load_model(path: Path | str) -> FittedModel:
    """
    Read a model file

    Raises:
        ModelError: Not a model file, unsupported version or inconsistent content
    """

    try:
        header, arrays = read_container(Path(path), MODEL_MAGIC, {MODEL_VERSION})
    except (DataError, OSError) as e:
        raise ModelError(f"cannot read model {path}: {e}") from e

    try:
        spec = FeatureSpec.model_validate(header["spec"])
        keys = unpack_strings(arrays["key_buf"], arrays["key_off"])
        clusters = None
        if header["clusters"] is not None:
            combos = tuple(
                TagCombo.parse(key) for key in unpack_strings(arrays["combo_buf"], arrays["combo_off"])
            )
            clusters = ClusterModel(
                combos,
                arrays["membership"],
                tuple(header["clusters"]["objective_history"]),
                header["clusters"]["iterations"],
            )

        shared: dict[int, int] = {}
        instances: dict[tuple[int, str], int] = {}
        fallbacks: dict[tuple[int, str], int] = {}
        for column, (owner, role) in enumerate(
            zip(arrays["column_owner"].tolist(), arrays["column_role"].tolist(), strict=True)
        ):
            if role == _SHARED:
                shared[owner] = column
            elif role == _INSTANCE:
                instances[(owner, keys[column])] = column
            else:
                fallbacks[(owner, keys[column])] = column
        catalog = ColumnCatalog(shared, instances, fallbacks, tuple(header["names"]), clusters)

        raw = header["diagnostics"]
        diagnostics = FitDiagnostics(
            loss=raw["loss"],
            objective=raw["objective"],
            iterations=raw["iterations"],
            converged=raw["converged"],
            gradient_norm=raw["gradient_norm"],
            loss_history=tuple(raw["loss_history"]),
            search_points=tuple(SearchPoint(p["params"], p["loss"], p["stage"]) for p in raw["search_points"]),
            message=raw["message"],
        )
        return FittedModel(float(header["bias"]), arrays["coefficients"], spec, catalog, diagnostics)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(f"{path}: inconsistent model file: {e}") from e


def export_model_text(model: FittedModel, target: TextIO) -> None:
    """Human-readable coefficient table: column name, tab, coefficient"""

    target.write(f"bias\t{model.bias:.17g}\n")
    for name, value in zip(model.catalog.names, model.coefficients.tolist(), strict=True):
        target.write(f"{name}\t{value:.17g}\n")
    for key, value in model.nonlinear_params.items():
        target.write(f"param:{key}\t{value:.17g}\n")


def ordered_for_prediction(log: EventLog) -> EventLog:
    """Reject logs whose per-student order is unknown"""

    if log.ordering is Ordering.RAW:
        raise ParameterError("prediction needs a per-student or globally chronological log")
    return log
