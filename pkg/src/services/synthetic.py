"""
Synthetic event logs from a known logistic learner model

The generating model is an ordinary FittedModel over a FeatureSpec, streamed
through the same feature engine used for fitting, plus a per-student ability
offset the model cannot see. errordec state follows the model-visible
predictions, so it carries the signal of the hidden ability.
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit, logit

from src.models.clustering import ClusterModel
from src.models.events import EventKind, EventLog, InteractionEvent, Ordering
from src.models.features import FeatureDescriptor, FeatureKind, FeatureLevel, FeatureSpec
from src.models.history import StudentHistory
from src.models.model import FitDiagnostics, FittedModel
from src.services.design import build_catalog
from src.services.event_log import sort_chronological
from src.services.features import apply_event
from src.services.predictor import predict
from src.utils.errors import ParameterError
from src.utils.logging import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()


def default_truth_spec() -> FeatureSpec:
    """Item intercepts, item practice, item recency and errordec"""

    return FeatureSpec(
        name="synthetic_truth",
        descriptors=(
            FeatureDescriptor(name="item", kind=FeatureKind.INTERCEPT, level=FeatureLevel.ITEM),
            FeatureDescriptor(name="practice", kind=FeatureKind.LOG_COUNT, level=FeatureLevel.ITEM),
            FeatureDescriptor(name="recency", kind=FeatureKind.RECENCY, level=FeatureLevel.ITEM, d=0.5),
            FeatureDescriptor(name="errordec", kind=FeatureKind.ERRORDEC, level=FeatureLevel.STUDENT, dec=0.95),
        ),
    )


class SyntheticSpec(BaseModel):
    """Shape of a synthetic log and the model that generates its outcomes"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_students: int = Field(default=200, ge=1)
    min_events: int = Field(default=20, ge=1)
    max_events: int = Field(default=100, ge=1)
    n_items: int = Field(default=60, ge=1)
    tags_per_part: int = Field(default=4, ge=1)
    max_tags: int = Field(default=2, ge=1)
    lecture_rate: float = Field(default=0.05, ge=0.0, lt=1.0)
    item_sd: float = Field(default=1.0, ge=0.0)
    ability_sd: float = Field(default=1.0, ge=0.0)
    bias: float = 0.0
    horizon_ms: int = Field(default=30 * 24 * 60 * 60 * 1000, gt=0)
    median_gap_ms: float = Field(default=180_000.0, gt=0.0)
    gap_sigma: float = Field(default=2.0, ge=0.0)
    truth: FeatureSpec = Field(default_factory=default_truth_spec)
    # coefficient per non-intercept descriptor; intercept instances draw N(0, item_sd)
    weights: dict[str, float] = Field(
        default_factory=lambda: {"practice": 0.2, "recency": 1.0, "errordec": -1.0}
    )

    @model_validator(mode="after")
    def check_ranges(self) -> "SyntheticSpec":
        if self.max_events < self.min_events:
            raise ValueError("max_events must be at least min_events")
        names = {d.name for d in self.truth.descriptors}
        unknown = set(self.weights) - names
        if unknown:
            raise ValueError(f"weights for unknown descriptors: {sorted(unknown)}")
        return self


def _item_table(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[str, int, tuple[int, ...]]]:
    width = len(str(spec.n_items - 1))
    items = []
    for j in range(spec.n_items):
        part = 1 + j % 7
        size = int(rng.integers(1, min(spec.max_tags, spec.tags_per_part) + 1))
        chosen = rng.choice(spec.tags_per_part, size=size, replace=False)
        items.append((f"q{j:0{width}d}", part, tuple(sorted(int(part * 100 + t) for t in chosen))))
    return items


def _truth_model(
    spec: SyntheticSpec,
    items: list[tuple[str, int, tuple[int, ...]]],
    clusters: ClusterModel | None,
    rng: np.random.Generator,
) -> FittedModel:
    skeleton = EventLog(
        tuple(
            InteractionEvent("skeleton", item_id, EventKind.QUESTION, part, tags, 0, True)
            for item_id, part, tags in items
        ),
        Ordering.GLOBAL,
    )
    catalog = build_catalog(skeleton, spec.truth, clusters, min_occurrence=0)
    coefficients = np.zeros(catalog.n_columns)
    for (index, _), column in sorted(catalog.instances.items(), key=lambda entry: entry[1]):
        descriptor = spec.truth.descriptors[index]
        if descriptor.kind is FeatureKind.INTERCEPT:
            coefficients[column] = rng.normal(0.0, spec.item_sd)
        else:
            coefficients[column] = spec.weights.get(descriptor.name, 0.0)
    for index, column in catalog.shared.items():
        coefficients[column] = spec.weights.get(spec.truth.descriptors[index].name, 0.0)

    diagnostics = FitDiagnostics(
        loss=0.0, objective=0.0, iterations=0, converged=True, gradient_norm=0.0, message="generating model"
    )
    return FittedModel(spec.bias, coefficients, spec.truth, catalog, diagnostics)


def generate_log(
    spec: SyntheticSpec | None = None,
    seed: int = 0,
    clusters: ClusterModel | None = None,
) -> tuple[EventLog, FittedModel]:
    """
    Globally chronological synthetic log and the model that generated it

    Raises:
        ParameterError: The truth spec reads clusters and none were given
    """

    spec = spec or SyntheticSpec()
    if spec.truth.uses_clusters and clusters is None:
        raise ParameterError("truth spec reads cluster history but no cluster model was given")

    rng = np.random.default_rng(seed)
    items = _item_table(spec, rng)
    truth = _truth_model(spec, items, clusters, rng)
    params = truth.history_params
    lectures = [(f"l{part}", part) for part in range(1, 8)]

    events: list[InteractionEvent] = []
    with perf_logger.timed("Synthesize", students=spec.n_students) as timing:
        id_width = len(str(spec.n_students - 1))
        for index in range(spec.n_students):
            student = f"u{index:0{id_width}d}"
            ability = rng.normal(0.0, spec.ability_sd)
            count = int(rng.integers(spec.min_events, spec.max_events + 1))
            gaps = np.maximum(
                np.rint(np.exp(rng.normal(np.log(spec.median_gap_ms), spec.gap_sigma, size=count))), 1000
            ).astype(np.int64)
            now = int(rng.integers(0, spec.horizon_ms))
            history = StudentHistory()

            for gap in gaps.tolist():
                now += gap
                if rng.random() < spec.lecture_rate:
                    item_id, part = lectures[int(rng.integers(len(lectures)))]
                    event = InteractionEvent(student, item_id, EventKind.LECTURE, part, (), now)
                    apply_event(history, event, None, params)
                    events.append(event)
                    continue

                item_id, part, tags = items[int(rng.integers(len(items)))]
                candidate = InteractionEvent(student, item_id, EventKind.QUESTION, part, tags, now, False)
                visible = predict(truth, history, candidate)
                correct = bool(rng.random() < expit(logit(visible) + ability))
                event = InteractionEvent(
                    student,
                    item_id,
                    EventKind.QUESTION,
                    part,
                    tags,
                    now,
                    correct,
                    trial_duration_ms=int(rng.integers(5_000, 60_000)),
                    had_prior_explanation=bool(rng.random() < 0.5),
                )
                apply_event(history, event, visible, params)
                events.append(event)
        timing["events"] = len(events)

    log = sort_chronological(EventLog(tuple(events), Ordering.PER_STUDENT))
    return log, truth
