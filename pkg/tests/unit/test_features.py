"""
Unit tests for the streaming feature engine
"""

import dataclasses
import math
import random

import numpy as np
import pytest

from src.models.clustering import UNASSIGNED_CLUSTER, ClusterModel
from src.models.features import FeatureKind, FeatureLevel, Outcome, TagCombo
from src.models.history import HistoryParams, StudentHistory
from src.services.design import build_catalog, weighted_count_column
from src.services.features import (
    apply_event,
    apply_outcome,
    featurize,
    recency_value,
    update_errordec,
    update_recency_weighted_count,
)
from src.utils.errors import OrderingError
from tests.factories import MINUTE, descriptor, lecture, question, random_log, spec_of

pytestmark = pytest.mark.unit


def full_spec():
    return spec_of(
        descriptor("item", "intercept", "item"),
        descriptor("item_all", "count", "item"),
        descriptor("item_wins", "count", "item", outcome="success"),
        descriptor("item_fails", "log_count", "item", outcome="failure"),
        descriptor("part_log", "log_count", "part"),
        descriptor("combo_count", "count", "tag_combo_in_part"),
        descriptor("lectures", "count", "lecture"),
        descriptor("wins", "count", "overall_success"),
        descriptor("fails", "count", "overall_failure"),
        descriptor("student_all", "count", "student"),
        descriptor("item_recency", "recency", "item", d=0.7),
        descriptor("combo_recency", "recency", "tag_combo_in_part", d=0.3),
        descriptor("cluster_recency", "recency", "cluster", d=0.5),
        descriptor("item_weighted", "recency_weighted_count", "item", w=0.6),
        descriptor("part_weighted", "recency_weighted_count", "part", w=0.9),
        descriptor("cluster_count", "count", "cluster"),
        descriptor("errordec", "errordec", "student", dec=0.8),
    )


def cluster_model_for(log, seed=0):
    """Two clusters over all but one of the log's combos"""

    combos = sorted({TagCombo(e.part, e.tags) for e in log.questions()})
    rng = np.random.default_rng(seed)
    kept = combos[1:]
    membership = rng.dirichlet([1.0, 1.0], size=len(kept))
    return ClusterModel(tuple(kept), membership)


def oracle_row(prior, event, spec, clusters, predictions):
    """Every feature value of event recomputed from the student's full prior list"""

    def crisp(e):
        return clusters.crisp_of(TagCombo(e.part, e.tags)) if clusters is not None else UNASSIGNED_CLUSTER

    def same_unit(level, other):
        if level is FeatureLevel.ITEM:
            return other.item_id == event.item_id
        if level is FeatureLevel.PART:
            return other.part == event.part
        if level is FeatureLevel.TAG_COMBO:
            return (other.part, other.tags) == (event.part, event.tags)
        if level is FeatureLevel.CLUSTER:
            return crisp(other) == crisp(event)
        return True

    questions = [e for e in prior if e.is_question]
    values = []
    for d in spec.descriptors:
        if d.kind is FeatureKind.INTERCEPT:
            values.append(1.0)
            continue
        if d.kind is FeatureKind.ERRORDEC:
            state = 0.0
            for e in questions:
                state = d.dec * state + (1 - d.dec) * (predictions[e] - int(e.correct))
            values.append(state)
            continue

        if d.level is FeatureLevel.LECTURE:
            matching = [e for e in prior if not e.is_question]
        elif d.level is FeatureLevel.OVERALL_SUCCESS:
            matching = [e for e in questions if e.correct]
        elif d.level is FeatureLevel.OVERALL_FAILURE:
            matching = [e for e in questions if not e.correct]
        else:
            matching = [e for e in questions if same_unit(d.level, e)]
        if d.outcome is Outcome.SUCCESS:
            matching = [e for e in matching if e.correct]
        elif d.outcome is Outcome.FAILURE:
            matching = [e for e in matching if not e.correct]

        if d.kind is FeatureKind.COUNT:
            values.append(float(len(matching)))
        elif d.kind is FeatureKind.LOG_COUNT:
            values.append(math.log(1 + len(matching)))
        elif d.kind is FeatureKind.RECENCY:
            if not matching:
                values.append(0.0)
            else:
                minutes = max((event.timestamp_ms - matching[-1].timestamp_ms) / MINUTE, 1.0)
                values.append(minutes ** -d.d)
        else:
            values.append(sum(d.w**j for j in range(len(matching))))
    return values


class TestPrimitives:
    """Unit tests for the per-feature update rules"""

    def test_recency_value(self):
        """Test power decay, the one-minute floor and the no-practice value"""

        assert recency_value(10 * MINUTE, 0, 0.5) == pytest.approx(10**-0.5)
        assert recency_value(1000, 0, 0.5) == 1.0
        assert recency_value(5, None, 0.5) == 0.0

    def test_recency_rejects_future_practice(self):
        """Test that practice after the current time is an ordering error"""

        with pytest.raises(OrderingError):
            recency_value(0, 10, 0.5)

    def test_weighted_count_column_matches_iteration(self):
        """Test the closed form against repeated updates"""

        for w in (0.1, 0.5, 0.93, 1.0):
            value = 0.0
            for n in range(1, 40):
                value = update_recency_weighted_count(value, w)
                assert weighted_count_column(np.array([n]), w)[0] == pytest.approx(value, rel=1e-12)

    def test_errordec_update(self):
        """Test one decayed signed-error step"""

        assert update_errordec(0.2, 0.9, 1, 0.75) == pytest.approx(0.75 * 0.2 + 0.25 * -0.1)


class TestHistoryUpdates:
    """Unit tests for apply_event and apply_outcome"""

    def test_lecture_only_advances_lecture_count(self):
        """Test that lectures leave question state untouched"""

        history = apply_event(StudentHistory(), lecture("s", "l1", 100))
        assert history.lecture_count == 1
        assert history.overall.attempts == 0
        assert history.items == {}

    def test_out_of_order_event_rejected(self):
        """Test that applying an older event raises OrderingError"""

        history = apply_event(StudentHistory(), question("s", "q1", 100))
        with pytest.raises(OrderingError):
            apply_event(history, question("s", "q1", 50))

    def test_deferred_outcome_matches_immediate(self):
        """Test that withholding then releasing the outcome ends in the same state"""

        params = HistoryParams(weights=(0.5,), dec=0.9)
        event = question("s", "q1", 100, correct=False, part=2, tags=(201, 202))

        immediate = apply_event(StudentHistory(), event, 0.7, params)
        deferred = apply_event(StudentHistory(), event, None, params, reveal=False)
        assert deferred.overall.failures == 0
        assert deferred.items["q1"].attempts == 1
        apply_outcome(deferred, event, 0.7, params)

        assert deferred == immediate
        assert immediate.errordec_state == pytest.approx(0.1 * 0.7)


class TestStreamingOracle:
    """Streaming features against a from-scratch recomputation"""

    def test_streaming_matches_brute_force(self):
        """Test every feature of every event of 200 random students within 1e-12"""

        log = random_log(2024, students=200, max_events=100, items=12, lecture_rate=0.1)
        clusters = cluster_model_for(log)
        spec = full_spec()
        catalog = build_catalog(log, spec, clusters, min_occurrence=0)
        params = HistoryParams.from_spec(spec, clusters)

        rng = random.Random(7)
        predictions = {e: rng.random() for e in log.questions()}
        histories = {}
        priors = {}
        checked = 0
        for event in log:
            history = histories.setdefault(event.student_id, StudentHistory())
            prior = priors.setdefault(event.student_id, [])
            if event.is_question:
                row = featurize(history, event, spec, catalog)
                expected = oracle_row(prior, event, spec, clusters, predictions)
                assert len(row) == len(expected)
                for (_, value), want in zip(row, expected, strict=True):
                    assert abs(value - want) <= 1e-12 * max(1.0, abs(want))
                checked += 1
            apply_event(history, event, predictions.get(event), params)
            prior.append(event)

        assert checked > 1000

    def test_current_label_is_never_read(self):
        """Test that flipping the current event's label leaves its row unchanged"""

        log = random_log(5, students=30, max_events=50)
        spec = full_spec()
        clusters = cluster_model_for(log, seed=1)
        catalog = build_catalog(log, spec, clusters, min_occurrence=0)
        params = HistoryParams.from_spec(spec, clusters)

        histories = {}
        for event in log:
            history = histories.setdefault(event.student_id, StudentHistory())
            if event.is_question:
                flipped = dataclasses.replace(event, correct=not event.correct)
                assert featurize(history, event, spec, catalog) == featurize(history, flipped, spec, catalog)
            apply_event(history, event, 0.5, params)
