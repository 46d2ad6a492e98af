"""
Integration tests for the ingest, split, fit and evaluate pipeline
"""

import io
from pathlib import Path

import numpy as np
import pytest

from src.models.features import FeatureSpec
from src.models.model import DeliveryPolicy, TrainingRun
from src.services.clustering import combo_covariance, fuzzy_cluster
from src.services.event_log import (
    assign_simulated_offsets,
    audit_split,
    events_to_text,
    parse_events,
    sort_chronological,
    temporal_slice,
)
from src.services.metrics import evaluate
from src.services.predictor import load_model, predict_log, save_model, warm_up
from src.services.synthetic import SyntheticSpec, generate_log
from src.services.trainer import fit_model

pytestmark = pytest.mark.integration

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


@pytest.fixture(scope="module")
def synthetic():
    return generate_log(SyntheticSpec(n_students=120, min_events=10, max_events=60, n_items=20), seed=31)


class TestPipeline:
    """End-to-end runs across the services"""

    def test_text_round_trip_then_split(self, synthetic):
        """Test that a written log parses back and splits without leakage"""

        log, _ = synthetic
        parsed, report = parse_events(io.StringIO(events_to_text(log)))
        assert report.bad_rows == 0
        ordered = sort_chronological(parsed)
        assert ordered.events == log.events

        shifted = sort_chronological(assign_simulated_offsets(ordered, 7 * 24 * 3_600_000, seed=0))
        split = temporal_slice(shifted, 0.6, 0.8)
        assert audit_split(split, shifted) == []
        assert len(split.train) > 0

    def test_afm_fit_and_evaluate(self, synthetic, tmp_path):
        """Test fitting a bundled spec, saving it and evaluating on a held-out slice"""

        log, _ = synthetic
        split = temporal_slice(log, 0.5, 0.8)
        spec = FeatureSpec.from_toml(CONFIGS / "afm.toml")
        model = fit_model(split.train, spec, TrainingRun(workers=2), min_occurrence=0)

        save_model(model, tmp_path / "afm.lktmodel")
        loaded = load_model(tmp_path / "afm.lktmodel")

        histories = warm_up(loaded, split.train)
        predictions, labels = predict_log(loaded, split.test, histories, batch_size=25)
        report = evaluate(predictions, labels, label="afm")

        assert report.n == sum(1 for _ in split.test.questions())
        assert report.auc > 0.55
        assert np.isfinite(report.log_loss)

    def test_withheld_labels_cost_little(self, synthetic):
        """Test that batch-withheld predictions stay close to immediate-label ones"""

        log, _ = synthetic
        split = temporal_slice(log, 0.5, 0.8)
        spec = FeatureSpec.from_toml(CONFIGS / "pfa.toml")
        model = fit_model(split.train, spec, TrainingRun(workers=1), min_occurrence=0, search=False)

        immediate, labels = predict_log(
            model, split.test, warm_up(model, split.train), 40, DeliveryPolicy.IMMEDIATE
        )
        withheld, _ = predict_log(model, split.test, warm_up(model, split.train), 40)

        assert abs(evaluate(immediate, labels).auc - evaluate(withheld, labels).auc) < 0.05

    def test_clustered_model(self, synthetic):
        """Test clustering combos from training data and fitting cluster features"""

        log, _ = synthetic
        split = temporal_slice(log, 0.5, 0.8)
        clusters = fuzzy_cluster(combo_covariance(log), 3, seed=0)
        spec = FeatureSpec.from_toml(CONFIGS / "full_model.toml")
        model = fit_model(split.train, spec, TrainingRun(workers=2), clusters, min_occurrence=0, search=False)

        predictions, labels = predict_log(model, split.test, warm_up(model, split.train))
        assert len(predictions) == len(labels)
        assert evaluate(predictions, labels).auc > 0.5
