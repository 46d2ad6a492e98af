"""
Unit tests for combo covariance and fuzzy clustering
"""

import numpy as np
import pytest

from src.models.clustering import UNASSIGNED_CLUSTER, ComboPerformanceMatrix
from src.models.features import TagCombo
from src.services.clustering import (
    FuzzyCMeans,
    assign,
    combo_covariance,
    fuzzy_cluster,
    load_cluster_table,
    save_cluster_table,
    sweep,
)
from src.utils.errors import DataError, InsufficientDataError, ParameterError
from tests.factories import global_log, question

pytestmark = pytest.mark.unit

A = dict(part=1, tags=(101,))
B = dict(part=2, tags=(201,))


def planted_matrix(block=4, noise=0.02, seed=0):
    """Two blocks of combos that covary within and not across"""

    rng = np.random.default_rng(seed)
    n = 2 * block
    matrix = np.zeros((n, n))
    matrix[:block, :block] = 0.9
    matrix[block:, block:] = 0.9
    matrix += rng.normal(0.0, noise, size=(n, n))
    matrix = (matrix + matrix.T) / 2
    combos = tuple(TagCombo(1 + j // 4, (j,)) for j in range(n))
    return ComboPerformanceMatrix(combos, matrix, np.full((n, n), 10))


class TestComboCovariance:
    """Unit tests for the performance covariance matrix"""

    def test_matches_hand_computation(self):
        """Test covariance from per-student mean correctness on a hand example"""

        events = []
        t = 0
        for student, a_marks, b_marks in (("s1", (1, 1), (1, 0)), ("s2", (1, 0), (0, 0)), ("s3", (0, 0), (1, 1))):
            for mark in a_marks:
                t += 1
                events.append(question(student, "qa", t, bool(mark), **A))
            for mark in b_marks:
                t += 1
                events.append(question(student, "qb", t, bool(mark), **B))
        # a single attempt does not form a cell
        events.append(question("s4", "qa", t + 1, True, **A))

        result = combo_covariance(global_log(events))

        assert result.combos == (TagCombo(**A), TagCombo(**B))
        assert result.matrix == pytest.approx(np.array([[0.25, -0.125], [-0.125, 0.25]]))
        assert result.support.tolist() == [[3, 3], [3, 3]]

    def test_needs_two_combos(self):
        """Test that a single eligible combo is insufficient"""

        events = [question(s, "qa", t, t % 2 == 0, **A) for t, s in enumerate(["s1", "s1", "s2", "s2"])]
        with pytest.raises(InsufficientDataError):
            combo_covariance(global_log(events))


class TestFuzzyCMeans:
    """Unit tests for the clusterer"""

    def test_recovers_planted_blocks(self):
        """Test that k=2 separates the two planted blocks exactly"""

        matrix = planted_matrix()
        model = fuzzy_cluster(matrix, 2, seed=3)
        crisp = model.crisp.tolist()

        assert len(set(crisp[:4])) == 1
        assert len(set(crisp[4:])) == 1
        assert crisp[0] != crisp[4]
        assert np.allclose(model.membership.sum(axis=1), 1.0)

    def test_objective_never_increases(self):
        """Test a non-increasing objective over many runs"""

        rng = np.random.default_rng(11)
        for seed in range(20):
            data = rng.normal(size=(30, 5))
            for k in (2, 3, 5):
                _, history, _ = FuzzyCMeans(k, seed=seed).fit(data)
                h = np.array(history)
                assert np.all(np.diff(h) <= 1e-9 * np.maximum(np.abs(h[:-1]), 1.0))

    def test_deterministic_under_seed(self):
        """Test identical memberships for the same seed"""

        matrix = planted_matrix(seed=5)
        first = fuzzy_cluster(matrix, 3, seed=1)
        second = fuzzy_cluster(matrix, 3, seed=1)
        assert np.array_equal(first.membership, second.membership)

    def test_identical_rows_split_membership(self):
        """Test that rows sitting exactly on a center stay valid memberships"""

        data = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
        membership, _, _ = FuzzyCMeans(2, seed=0).fit(data)
        assert np.allclose(membership.sum(axis=1), 1.0)
        assert np.argmax(membership[0]) != np.argmax(membership[2])

    def test_invalid_parameters(self):
        """Test bad k and fuzzifier values"""

        with pytest.raises(ParameterError):
            FuzzyCMeans(1)
        with pytest.raises(ParameterError):
            FuzzyCMeans(2, fuzzifier=1.0)
        with pytest.raises(ParameterError):
            FuzzyCMeans(4).fit(np.zeros((4, 2)))


class TestClusterModel:
    """Unit tests for assignment, sweeps and cluster tables"""

    def test_unknown_combo_is_uniform(self):
        """Test that an unseen combo gets a uniform row and no crisp cluster"""

        model = fuzzy_cluster(planted_matrix(), 2)
        membership, crisp = assign(model, TagCombo(7, (999,)))
        assert membership.tolist() == [0.5, 0.5]
        assert crisp == UNASSIGNED_CLUSTER

    def test_known_combo(self):
        """Test that a known combo returns its own row"""

        matrix = planted_matrix()
        model = fuzzy_cluster(matrix, 2)
        membership, crisp = assign(model, matrix.combos[5])
        assert np.array_equal(membership, model.membership[5])
        assert crisp == int(model.crisp[5])

    def test_sweep_reports_each_k(self):
        """Test one result per requested k with its final objective"""

        results = sweep(planted_matrix(), [2, 3, 4], seed=0)
        assert [model.k for model, _ in results] == [2, 3, 4]
        assert all(objective == model.objective_history[-1] for model, objective in results)
        assert all(0.0 <= model.partition_coefficient <= 1.0 for model, _ in results)

    def test_table_round_trip(self, tmp_path):
        """Test that a saved cluster table loads back exactly"""

        model = fuzzy_cluster(planted_matrix(), 3, seed=2)
        path = tmp_path / "clusters.tsv"
        save_cluster_table(model, path)
        loaded = load_cluster_table(path)

        assert loaded.combos == model.combos
        assert np.array_equal(loaded.membership, model.membership)
        assert np.array_equal(loaded.crisp, model.crisp)

    def test_table_rows_must_sum_to_one(self, tmp_path):
        """Test that a corrupted table is a data error"""

        path = tmp_path / "bad.tsv"
        path.write_text("combo\tm0\tm1\tcrisp\n1:101\t0.7\t0.7\t0\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_cluster_table(path)
