"""
Adaptive practice simulation under pedagogical decision rules

Simulated students answer from their own ground-truth learner model; the
model under test only decides what to practice next. Failures cost more time
than successes, so the rule's choice of difficulty changes how many trials
fit in the budget.
"""

import json
import logging
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import TextIO

import numpy as np
import pandas as pd

from src.config import settings
from src.models.catalog import ColumnCatalog
from src.models.events import EventKind, InteractionEvent
from src.models.features import FeatureDescriptor, FeatureKind, FeatureLevel, FeatureSpec
from src.models.history import StudentHistory
from src.models.model import FitDiagnostics, FittedModel
from src.models.pdr import (
    DropNRule,
    MasteryRule,
    PdrConfig,
    PoolItem,
    PopulationSpec,
    Rule,
    SimOutcome,
    SummaryRow,
    TargetDifficultyRule,
    TrialRecord,
)
from src.services.features import apply_event
from src.services.predictor import predict
from src.utils.errors import ParameterError
from src.utils.logging import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()

MS_PER_HOUR = 3_600_000


@dataclass
class SelectionState:
    """Per-session memory a rule may need (drop_n streaks and position)"""

    streaks: dict[str, int] = field(default_factory=dict)
    last: str | None = None

    def record(self, item_id: str, correct: bool) -> None:
        self.streaks[item_id] = self.streaks.get(item_id, 0) + 1 if correct else 0
        self.last = item_id


def select_item(
    rule: Rule, predictions: Mapping[str, float], state: SelectionState | None = None
) -> str | None:
    """
    Next item to practice, or None to stop

    mastery: lowest prediction among items at or below the threshold.
    drop_n: next item after the last one, in ascending id order, whose
    consecutive-correct streak is below n.
    target_difficulty: prediction closest to p_star.
    Ties go to the lower item id.

    Raises:
        ParameterError: Empty pool
    """

    if not predictions:
        raise ParameterError("cannot select from an empty pool")

    if isinstance(rule, MasteryRule):
        open_items = [(p, item) for item, p in predictions.items() if p <= rule.threshold]
        return min(open_items)[1] if open_items else None

    if isinstance(rule, TargetDifficultyRule):
        return min((abs(p - rule.p_star), item) for item, p in predictions.items())[1]

    if isinstance(rule, DropNRule):
        state = state or SelectionState()
        eligible = [item for item in sorted(predictions) if state.streaks.get(item, 0) < rule.n]
        if not eligible:
            return None
        if state.last is not None:
            later = [item for item in eligible if item > state.last]
            if later:
                return later[0]
        return eligible[0]

    raise ParameterError(f"unknown rule {rule!r}")


@dataclass(frozen=True)
class SimStudent:
    """
    Ground-truth learner

    logit p = ability + item intercept + learning_rate * prior attempts on the
    item + recency_weight * recency(d) of the item
    """

    student_id: str
    ability: float
    item_intercepts: dict[str, float]
    learning_rate: float
    recency_weight: float
    decay: float
    seed: int

    def oracle_model(self, d_offset: float = 0.0) -> FittedModel:
        """The student's true model as a FittedModel, decay optionally perturbed"""

        d = self.decay + d_offset
        if d <= 0:
            raise ParameterError(f"perturbed decay must stay positive, got {d}")
        spec = FeatureSpec(
            name="oracle",
            descriptors=(
                FeatureDescriptor(name="item", kind=FeatureKind.INTERCEPT, level=FeatureLevel.ITEM, fallback=False),
                FeatureDescriptor(name="practice", kind=FeatureKind.COUNT, level=FeatureLevel.ITEM),
                FeatureDescriptor(name="recency", kind=FeatureKind.RECENCY, level=FeatureLevel.ITEM, d=d),
            ),
        )
        items = sorted(self.item_intercepts)
        catalog = ColumnCatalog(
            shared={1: len(items), 2: len(items) + 1},
            instances={(0, item): column for column, item in enumerate(items)},
            fallbacks={},
            names=(*(f"item[{item}]" for item in items), "practice", "recency"),
        )
        coefficients = np.array(
            [self.item_intercepts[item] for item in items] + [self.learning_rate, self.recency_weight]
        )
        diagnostics = FitDiagnostics(
            loss=0.0, objective=0.0, iterations=0, converged=True, gradient_norm=0.0, message="oracle"
        )
        return FittedModel(self.ability, coefficients, spec, catalog, diagnostics)


ModelSource = FittedModel | Callable[[SimStudent], FittedModel]


def oracle_source(d_offset: float = 0.0) -> Callable[[SimStudent], FittedModel]:
    """Model source giving each student their own (optionally perturbed) truth"""

    def source(student: SimStudent) -> FittedModel:
        return student.oracle_model(d_offset)

    return source


def resolve_model(source: ModelSource, student: SimStudent) -> FittedModel:
    return source if isinstance(source, FittedModel) else source(student)


def generate_population(
    spec: PopulationSpec, n_students: int, seed: int
) -> tuple[tuple[PoolItem, ...], list[SimStudent]]:
    """Item pool and n_students students drawn from spec"""

    if n_students < 1:
        raise ParameterError(f"n_students must be at least 1, got {n_students}")

    rng = np.random.default_rng(seed)
    width = len(str(spec.n_items - 1))
    pool = tuple(
        PoolItem(
            item_id=f"i{j:0{width}d}",
            part=1 + j % 7,
            tags=((1 + j % 7) * 100 + j % spec.tags_per_part,),
        )
        for j in range(spec.n_items)
    )
    intercepts = rng.normal(spec.item_mean, spec.item_sd, size=spec.n_items)
    item_intercepts = {item.item_id: float(b) for item, b in zip(pool, intercepts, strict=True)}

    abilities = rng.normal(0.0, spec.ability_sd, size=n_students)
    seeds = rng.integers(0, 2**63 - 1, size=n_students)
    id_width = len(str(n_students - 1))
    students = [
        SimStudent(
            student_id=f"s{index:0{id_width}d}",
            ability=float(abilities[index]),
            item_intercepts=item_intercepts,
            learning_rate=spec.learning_rate,
            recency_weight=spec.recency_weight,
            decay=spec.decay,
            seed=int(seeds[index]),
        )
        for index in range(n_students)
    ]
    return pool, students


def _candidate(student: SimStudent, item: PoolItem, now_ms: int) -> InteractionEvent:
    # correctness is a placeholder; featurize never reads it
    return InteractionEvent(student.student_id, item.item_id, EventKind.QUESTION, item.part, item.tags, now_ms, False)


def _true_probabilities(
    truth: FittedModel, history: StudentHistory, student: SimStudent, pool: list[PoolItem], now_ms: int
) -> list[float]:
    return [predict(truth, history, _candidate(student, item, now_ms)) for item in pool]


def run_session(
    student: SimStudent,
    model: FittedModel,
    pdr: PdrConfig,
    seed: int,
    shadows: Mapping[str, FittedModel] | None = None,
) -> SimOutcome:
    """
    Practice until the budget cannot fit a worst-case trial or the rule stops

    Shadow models see the same event stream; their decisions are compared to
    the driving model's at every trial.

    Raises:
        ParameterError: Empty item pool
    """

    pool = sorted(pdr.pool, key=lambda item: item.item_id)
    if not pool:
        raise ParameterError("PDR item pool is empty")

    rng = np.random.default_rng(seed)
    truth = student.oracle_model()
    shadows = dict(shadows or {})

    model_history = StudentHistory()
    true_history = StudentHistory()
    state = SelectionState()
    shadow_histories = {name: StudentHistory() for name in shadows}
    shadow_states = {name: SelectionState() for name in shadows}
    decision_counts = {name: [0, 0] for name in shadows}
    threshold_counts = {name: [0, 0] for name in shadows}
    threshold = pdr.rule.threshold if isinstance(pdr.rule, MasteryRule) else None

    start = _true_probabilities(truth, StudentHistory(), student, pool, 0)
    trace: list[TrialRecord] = []
    elapsed = 0

    while elapsed + pdr.failure_cost_ms <= pdr.time_budget_ms:
        candidates = {item.item_id: _candidate(student, item, elapsed) for item in pool}
        predictions = {item: predict(model, model_history, event) for item, event in candidates.items()}
        choice = select_item(pdr.rule, predictions, state)

        shadow_predictions = {}
        for name, shadow in shadows.items():
            own = {item: predict(shadow, shadow_histories[name], event) for item, event in candidates.items()}
            shadow_predictions[name] = own
            decision_counts[name][0] += select_item(pdr.rule, own, shadow_states[name]) == choice
            decision_counts[name][1] += 1
            if threshold is not None:
                threshold_counts[name][0] += sum((own[i] > threshold) == (predictions[i] > threshold) for i in own)
                threshold_counts[name][1] += len(own)

        if choice is None:
            break

        true_p = predict(truth, true_history, candidates[choice])
        correct = bool(rng.random() < true_p)
        cost = pdr.success_duration_ms if correct else pdr.failure_cost_ms
        event = replace(candidates[choice], correct=correct)

        apply_event(model_history, event, predictions[choice], model.history_params)
        apply_event(true_history, event, true_p, truth.history_params)
        state.record(choice, correct)
        for name, shadow in shadows.items():
            apply_event(shadow_histories[name], event, shadow_predictions[name][choice], shadow.history_params)
            shadow_states[name].record(choice, correct)

        trace.append(
            TrialRecord(
                index=len(trace),
                timestamp_ms=elapsed,
                item_id=choice,
                predictions=predictions,
                predicted=predictions[choice],
                true_probability=true_p,
                correct=correct,
                cost_ms=cost,
                elapsed_ms=elapsed + cost,
            )
        )
        elapsed += cost

    end = _true_probabilities(truth, true_history, student, pool, elapsed + pdr.retention_interval_ms)
    return SimOutcome(
        student_id=student.student_id,
        trace=tuple(trace),
        elapsed_ms=elapsed,
        mastered=sum(p > pdr.mastery_criterion for p in end),
        start_mean_probability=float(np.mean(start)),
        end_mean_probability=float(np.mean(end)),
        decision_agreement={name: (a, n) for name, (a, n) in decision_counts.items()},
        threshold_agreement={name: (a, n) for name, (a, n) in threshold_counts.items() if n},
    )


def summarize(model_name: str, pdr_name: str, pdr: PdrConfig, outcomes: list[SimOutcome]) -> SummaryRow:
    """Population means of one (model, rule) cell"""

    total_trials = sum(o.trials for o in outcomes)
    total_minutes = sum(o.elapsed_ms for o in outcomes) / 60_000
    gains_per_hour = [o.learning_gain / (o.elapsed_ms / MS_PER_HOUR) if o.elapsed_ms else 0.0 for o in outcomes]

    def pooled(counts: list[dict[str, tuple[int, int]]]) -> dict[str, float]:
        totals: dict[str, list[int]] = {}
        for per_student in counts:
            for name, (agree, n) in per_student.items():
                slot = totals.setdefault(name, [0, 0])
                slot[0] += agree
                slot[1] += n
        return {name: agree / n for name, (agree, n) in sorted(totals.items()) if n}

    return SummaryRow(
        model=model_name,
        pdr=pdr_name,
        rule=pdr.label,
        students=len(outcomes),
        mean_trials=float(np.mean([o.trials for o in outcomes])),
        mean_successes=float(np.mean([o.successes for o in outcomes])),
        mean_mastered=float(np.mean([o.mastered for o in outcomes])),
        mean_learning_gain=float(np.mean([o.learning_gain for o in outcomes])),
        mean_gain_per_hour=float(np.mean(gains_per_hour)),
        trials_per_minute=total_trials / total_minutes if total_minutes else 0.0,
        decision_agreement=pooled([o.decision_agreement for o in outcomes]),
        threshold_agreement=pooled([o.threshold_agreement for o in outcomes]),
    )


@dataclass(frozen=True)
class Comparison:
    """Summary rows plus the per-student outcomes behind them"""

    rows: list[SummaryRow]
    outcomes: dict[tuple[str, str], list[SimOutcome]]


def compare_pdrs(
    population: PopulationSpec,
    models: Mapping[str, ModelSource],
    pdrs: Mapping[str, PdrConfig],
    n_students: int,
    seed: int,
    workers: int | None = None,
) -> Comparison:
    """
    Simulate every (model, rule) pair on the same students

    Each student keeps one outcome seed across all pairs. While a model
    drives a session, every other model shadows it on the identical stream
    and its decision agreement is recorded.

    Raises:
        ParameterError: n_students < 1, or no models or rules
    """

    if not models or not pdrs:
        raise ParameterError("need at least one model and one decision rule")
    pool, students = generate_population(population, n_students, seed)
    workers = workers or settings.workers

    rows: list[SummaryRow] = []
    outcomes: dict[tuple[str, str], list[SimOutcome]] = {}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        for pdr_name, pdr in pdrs.items():
            configured = pdr if pdr.pool else pdr.model_copy(update={"pool": pool})
            for model_name, source in models.items():

                def session(student: SimStudent, model_name: str = model_name, pdr: PdrConfig = configured):
                    shadows = {
                        other: resolve_model(models[other], student) for other in models if other != model_name
                    }
                    return run_session(student, resolve_model(models[model_name], student), pdr, student.seed, shadows)

                with perf_logger.timed("Simulate", model=model_name, pdr=pdr_name, students=len(students)):
                    cell = list(executor.map(session, students))
                outcomes[(model_name, pdr_name)] = cell
                rows.append(summarize(model_name, pdr_name, configured, cell))

    return Comparison(rows, outcomes)


def write_traces(comparison: Comparison, target: TextIO) -> None:
    """One JSON line per simulated trial"""

    for (model_name, pdr_name), cell in comparison.outcomes.items():
        for outcome in cell:
            for trial in outcome.trace:
                record = {"model": model_name, "pdr": pdr_name, "student": outcome.student_id, **asdict(trial)}
                target.write(json.dumps(record, sort_keys=True) + "\n")


def summary_frame(rows: list[SummaryRow]) -> pd.DataFrame:
    records = []
    for row in rows:
        record = row.model_dump(exclude={"decision_agreement", "threshold_agreement"})
        record |= {f"agree:{name}": value for name, value in row.decision_agreement.items()}
        record |= {f"threshold_agree:{name}": value for name, value in row.threshold_agreement.items()}
        records.append(record)
    return pd.DataFrame.from_records(records)


def write_summary(rows: list[SummaryRow], target: TextIO) -> None:
    """Tab-delimited summary table"""
    summary_frame(rows).to_csv(target, sep="\t", index=False, lineterminator="\n")
