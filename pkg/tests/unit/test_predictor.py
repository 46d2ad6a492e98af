"""
Unit tests for prediction, batched delivery and model files
"""

import io
import random

import numpy as np
import pytest

from src.models.clustering import ClusterModel
from src.models.events import EventLog, Ordering
from src.models.features import TagCombo
from src.models.history import StudentHistory
from src.models.model import DeliveryPolicy, TrainingRun
from src.services.features import apply_event
from src.services.predictor import (
    batched_predict,
    export_model_text,
    iter_batches,
    load_model,
    ordered_for_prediction,
    predict,
    predict_log,
    save_model,
    scale_intercepts,
    warm_up,
)
from src.services.synthetic import SyntheticSpec, generate_log
from src.services.trainer import fit_model
from src.utils.errors import ModelError, ParameterError
from tests.factories import descriptor, spec_of

pytestmark = pytest.mark.unit


@pytest.fixture(scope="module")
def fitted():
    log, _ = generate_log(SyntheticSpec(n_students=30, n_items=8), seed=21)
    spec = spec_of(
        descriptor("item", "intercept", "item"),
        descriptor("wins", "count", "item", outcome="success"),
        descriptor("fails", "count", "item", outcome="failure"),
        descriptor("recency", "recency", "item", d=0.4),
        descriptor("errordec", "errordec", "student", dec=0.8),
    )
    model = fit_model(log, spec, TrainingRun(workers=1), min_occurrence=0, search=False)
    return model, log


def masked_oracle(model, events, partition):
    """Replay every prediction from scratch: earlier batches fully, in-batch events masked"""

    params = model.history_params
    predicted = {}
    predictions = []
    start = 0
    for size in partition:
        batch = events[start : start + size]
        for j, event in enumerate(batch):
            if not event.is_question:
                continue
            history = StudentHistory()
            for earlier in events[:start]:
                if earlier.student_id == event.student_id:
                    apply_event(history, earlier, predicted.get(earlier), params)
            for earlier in batch[:j]:
                if earlier.student_id == event.student_id:
                    apply_event(history, earlier, None, params, reveal=False)
            p = predict(model, history, event)
            predicted[event] = p
            predictions.append(p)
        start += size
    return predictions


def random_partition(rng, n):
    sizes = []
    while n > 0:
        size = rng.randint(1, min(n, 12))
        sizes.append(size)
        n -= size
    return sizes


class TestPredict:
    """Unit tests for single-event prediction"""

    def test_predictions_are_clamped_probabilities(self, fitted):
        """Test that every prediction lies strictly inside (0, 1)"""

        model, log = fitted
        predictions, labels = predict_log(model, log)
        assert len(predictions) == len(labels) == sum(1 for _ in log.questions())
        assert np.all((predictions >= 1e-7) & (predictions <= 1 - 1e-7))

    def test_raw_log_rejected(self, fitted):
        """Test that unordered logs cannot be predicted"""

        _, log = fitted
        with pytest.raises(ParameterError):
            ordered_for_prediction(EventLog(log.events, Ordering.RAW))

    def test_order_invariance_across_students(self, fitted):
        """Test that per-student and global orderings give the same predictions"""

        model, log = fitted
        per_student = EventLog(
            tuple(sorted(log.events, key=lambda e: (e.student_id, e.timestamp_ms))), Ordering.PER_STUDENT
        )

        def keyed(source):
            predictions, _ = predict_log(model, source)
            return dict(zip(list(source.questions()), predictions.tolist(), strict=True))

        assert keyed(log) == keyed(per_student)


class TestBatchedDelivery:
    """Unit tests for withheld and immediate label delivery"""

    def test_withheld_matches_masking_oracle(self, fitted):
        """Test withheld predictions against the masking oracle on 100 random partitions"""

        model, log = fitted
        events = log.events[:70]
        rng = random.Random(3)
        for _ in range(100):
            partition = random_partition(rng, len(events))
            histories = {}
            actual = []
            start = 0
            for size in partition:
                batch = EventLog(events[start : start + size], Ordering.GLOBAL)
                actual.extend(batched_predict(model, histories, batch, DeliveryPolicy.WITHHELD))
                start += size
            assert actual == pytest.approx(masked_oracle(model, events, partition), abs=1e-12)

    def test_immediate_equals_batch_of_one(self, fitted):
        """Test that immediate delivery matches one-event batches"""

        model, log = fitted
        immediate, _ = predict_log(model, log, batch_size=50, policy=DeliveryPolicy.IMMEDIATE)
        single, _ = predict_log(model, log, batch_size=1)
        assert np.array_equal(immediate, single)

    def test_withheld_batches_differ_from_immediate(self, fitted):
        """Test that withholding labels changes some predictions"""

        model, log = fitted
        withheld, _ = predict_log(model, log, batch_size=50)
        immediate, _ = predict_log(model, log, batch_size=50, policy=DeliveryPolicy.IMMEDIATE)
        assert not np.array_equal(withheld, immediate)

    def test_warm_up_continues_the_stream(self, fitted):
        """Test that warming up on a prefix then predicting the rest equals one pass"""

        model, log = fitted
        cut = len(log) // 2
        full, _ = predict_log(model, log)
        head = EventLog(log.events[:cut], Ordering.GLOBAL)
        tail = EventLog(log.events[cut:], Ordering.GLOBAL)
        rest, _ = predict_log(model, tail, warm_up(model, head))
        assert np.array_equal(full[-len(rest) :], rest)

    def test_batches_cover_the_log_in_order(self, fitted):
        """Test that batches keep order and ordering, with a short final batch"""

        _, log = fitted
        batches = list(iter_batches(log, 7))
        assert [len(b) for b in batches[:-1]] == [7] * (len(batches) - 1)
        assert 1 <= len(batches[-1]) <= 7
        assert tuple(e for b in batches for e in b) == log.events
        assert all(b.ordering is log.ordering for b in batches)

    def test_zero_batch_size_rejected(self, fitted):
        """Test that a batch size below one is a parameter error"""

        _, log = fitted
        with pytest.raises(ParameterError):
            list(iter_batches(log, 0))


class TestModelFiles:
    """Unit tests for saving, loading and exporting models"""

    def test_save_load_round_trip_is_bit_identical(self, fitted, tmp_path):
        """Test that a loaded model predicts identically and re-saves to the same bytes"""

        model, log = fitted
        first = tmp_path / "a.lktmodel"
        second = tmp_path / "b.lktmodel"
        save_model(model, first)
        loaded = load_model(first)
        save_model(loaded, second)

        assert first.read_bytes() == second.read_bytes()
        assert loaded.spec == model.spec
        assert loaded.catalog.names == model.catalog.names
        assert np.array_equal(predict_log(loaded, log)[0], predict_log(model, log)[0])

    def test_cluster_model_survives_round_trip(self, tmp_path):
        """Test that cluster memberships are stored with the model"""

        log, _ = generate_log(SyntheticSpec(n_students=15, n_items=6), seed=2)
        combos = sorted({TagCombo(e.part, e.tags) for e in log.questions()})
        membership = np.random.default_rng(0).dirichlet([1.0, 1.0, 1.0], size=len(combos))
        clusters = ClusterModel(tuple(combos), membership)
        spec = spec_of(descriptor("kc", "intercept", "cluster"), descriptor("kc_count", "count", "cluster"))
        model = fit_model(log, spec, TrainingRun(workers=1), clusters, min_occurrence=0)

        save_model(model, tmp_path / "m.lktmodel")
        loaded = load_model(tmp_path / "m.lktmodel")
        assert loaded.catalog.clusters.combos == clusters.combos
        assert np.array_equal(loaded.catalog.clusters.membership, membership)
        assert np.array_equal(predict_log(loaded, log)[0], predict_log(model, log)[0])

    def test_not_a_model_file(self, tmp_path):
        """Test that other files are rejected as model errors"""

        path = tmp_path / "junk.lktmodel"
        path.write_bytes(b"definitely not a model")
        with pytest.raises(ModelError):
            load_model(path)

    def test_text_export(self, fitted):
        """Test one line for the bias, each column and each nonlinear parameter"""

        model, _ = fitted
        buffer = io.StringIO()
        export_model_text(model, buffer)
        lines = buffer.getvalue().splitlines()

        assert lines[0].startswith("bias\t")
        assert len(lines) == 1 + model.catalog.n_columns + len(model.nonlinear_params)
        assert lines[-1].startswith("param:")
        assert float(lines[1].split("\t")[1]) == model.coefficients[0]


class TestScaleIntercepts:
    """Unit tests for experimental intercept scaling"""

    def test_only_intercepts_scale(self, fitted):
        """Test that slopes are untouched and intercepts shrink"""

        model, _ = fitted
        scaled = scale_intercepts(model, 0.5)
        columns = model.intercept_columns()
        others = np.setdiff1d(np.arange(model.catalog.n_columns), columns)

        assert np.array_equal(scaled.coefficients[columns], model.coefficients[columns] * 0.5)
        assert np.array_equal(scaled.coefficients[others], model.coefficients[others])
        assert scaled.bias == model.bias

    def test_negative_factor_rejected(self, fitted):
        """Test that a negative factor is a parameter error"""

        model, _ = fitted
        with pytest.raises(ParameterError):
            scale_intercepts(model, -1.0)
