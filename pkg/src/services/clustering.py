"""
Knowledge components from combo performance covariance

Tag combos whose per-student mean correctness covaries are grouped with
fuzzy c-means over the rows of the covariance matrix.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from src.config import settings
from src.models.clustering import UNASSIGNED_CLUSTER, ClusterModel, ComboPerformanceMatrix
from src.models.events import EventLog
from src.models.features import TagCombo
from src.utils.errors import DataError, InsufficientDataError, NumericalError, ParameterError
from src.utils.logging import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()

# Relative objective increase tolerated as rounding noise
_OBJECTIVE_NOISE = 1e-9


def combo_covariance(log: EventLog, min_students: int = 2) -> ComboPerformanceMatrix:
    """
    Covariance across students of per-student mean correctness per combo

    Only (student, combo) cells with at least 2 attempts contribute. Each
    pair uses the students observed on both combos (sample covariance); pairs
    with fewer than min_students such students are set to 0.

    Raises:
        InsufficientDataError: Fewer than 2 combos have 2 or more contributing students
    """

    records = [
        (event.student_id, TagCombo(event.part, event.tags), float(bool(event.correct)))
        for event in log.questions()
    ]
    frame = pd.DataFrame.from_records(records, columns=["student", "combo", "correct"])
    cells = frame.groupby(["student", "combo"], sort=True)["correct"].agg(["mean", "count"])
    cells = cells[cells["count"] >= 2]

    table = cells["mean"].unstack("combo")
    table = table.loc[:, table.notna().sum(axis=0) >= 2]
    combos = tuple(sorted(table.columns))
    if len(combos) < 2:
        raise InsufficientDataError(f"{len(combos)} eligible combos; need at least 2")
    table = table[list(combos)]

    observed = table.notna().to_numpy(dtype=np.float64)
    support = (observed.T @ observed).astype(np.int64)
    covariance = table.cov(min_periods=max(min_students, 2), ddof=1).to_numpy()
    covariance = np.nan_to_num(covariance, nan=0.0)
    covariance = (covariance + covariance.T) / 2.0
    covariance[support < min_students] = 0.0

    logger.info(f"Combo covariance over {len(combos)} combos from {table.shape[0]} students")
    return ComboPerformanceMatrix(combos, covariance, support)


class FuzzyCMeans:
    """
    Fuzzy c-means with k-means++ seeding

    Each iteration moves the centers to the membership-weighted means and then
    recomputes memberships; the objective is recorded after every membership
    update.
    """

    def __init__(
        self,
        k: int,
        fuzzifier: float | None = None,
        seed: int = 0,
        max_iter: int = 300,
        tol: float = 1e-9,
    ) -> None:
        self.k = k
        self.fuzzifier = settings.fuzzifier if fuzzifier is None else fuzzifier
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        if k < 2:
            raise ParameterError(f"k must be at least 2, got {k}")
        if not self.fuzzifier > 1.0:
            raise ParameterError(f"fuzzifier must exceed 1, got {self.fuzzifier}")

    def _seed_centers(self, data: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        n = data.shape[0]
        chosen = [int(rng.integers(n))]
        nearest = cdist(data, data[chosen], metric="sqeuclidean").min(axis=1)
        while len(chosen) < self.k:
            total = nearest.sum()
            if total > 0:
                pick = int(rng.choice(n, p=nearest / total))
            else:
                remaining = np.setdiff1d(np.arange(n), chosen)
                pick = int(rng.choice(remaining))
            chosen.append(pick)
            nearest = np.minimum(nearest, cdist(data, data[[pick]], metric="sqeuclidean")[:, 0])
        return data[chosen].copy()

    def _memberships(self, squared: np.ndarray) -> np.ndarray:
        m = self.fuzzifier
        membership = np.zeros_like(squared)
        exact = squared <= 0.0
        hit = exact.any(axis=1)
        if hit.any():
            membership[hit] = exact[hit] / exact[hit].sum(axis=1, keepdims=True)
        rest = ~hit
        if rest.any():
            scaled = squared[rest] / squared[rest].min(axis=1, keepdims=True)
            inverse = scaled ** (-1.0 / (m - 1.0))
            membership[rest] = inverse / inverse.sum(axis=1, keepdims=True)
        return membership

    def _objective(self, membership: np.ndarray, squared: np.ndarray) -> float:
        return float(np.sum((membership**self.fuzzifier) * squared))

    def fit(self, data: np.ndarray) -> tuple[np.ndarray, tuple[float, ...], int]:
        """
        Memberships, objective history and iteration count for the rows of data

        Raises:
            ParameterError: k not below the number of rows
            NumericalError: Objective increased beyond rounding noise
        """

        n = data.shape[0]
        if self.k >= n:
            raise ParameterError(f"k={self.k} must be below the number of combos ({n})")

        centers = self._seed_centers(data)
        squared = cdist(data, centers, metric="sqeuclidean")
        membership = self._memberships(squared)
        history = [self._objective(membership, squared)]

        iterations = 0
        for iterations in range(1, self.max_iter + 1):
            weights = membership**self.fuzzifier
            mass = weights.sum(axis=0)
            # an empty cluster keeps its previous center
            centers = np.where(
                mass[:, None] > 0, (weights.T @ data) / np.maximum(mass, np.finfo(float).tiny)[:, None], centers
            )
            squared = cdist(data, centers, metric="sqeuclidean")
            previous = membership
            membership = self._memberships(squared)
            objective = self._objective(membership, squared)

            increase = objective - history[-1]
            if increase > _OBJECTIVE_NOISE * max(abs(history[-1]), 1.0):
                raise NumericalError(
                    f"fuzzy c-means objective rose from {history[-1]:.12g} to {objective:.12g} "
                    f"at iteration {iterations}"
                )
            if increase > 0:
                logger.warning(f"Clustering objective noise of {increase:.3e} at iteration {iterations}")
            history.append(objective)

            if np.linalg.norm(membership - previous) < self.tol:
                break

        return membership, tuple(history), iterations


def fuzzy_cluster(
    matrix: ComboPerformanceMatrix,
    k: int,
    fuzzifier: float | None = None,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-9,
) -> ClusterModel:
    """Fuzzy c-means over the covariance rows of matrix"""

    with perf_logger.timed("Cluster", combos=matrix.size, k=k) as timing:
        membership, history, iterations = FuzzyCMeans(k, fuzzifier, seed, max_iter, tol).fit(matrix.matrix)
        timing["iterations"] = iterations
        timing["objective"] = f"{history[-1]:.6g}"
    return ClusterModel(matrix.combos, membership, history, iterations)


def assign(model: ClusterModel, combo: TagCombo) -> tuple[np.ndarray, int]:
    """Membership row and crisp cluster; unknown combos get a uniform row"""

    row = model.index.get(combo)
    if row is None:
        return np.full(model.k, 1.0 / model.k), UNASSIGNED_CLUSTER
    return model.membership[row].copy(), int(model.crisp[row])


def sweep(
    matrix: ComboPerformanceMatrix,
    ks: list[int],
    fuzzifier: float | None = None,
    seed: int = 0,
) -> list[tuple[ClusterModel, float]]:
    """Cluster at each k; the caller compares the final objectives"""

    results = []
    for k in ks:
        model = fuzzy_cluster(matrix, k, fuzzifier, seed)
        results.append((model, model.objective_history[-1]))
    return results


def save_cluster_table(model: ClusterModel, path: Path | str) -> None:
    """Tab-delimited table: combo, one membership column per cluster, crisp id"""

    frame = pd.DataFrame(model.membership, columns=[f"m{j}" for j in range(model.k)])
    frame.insert(0, "combo", [combo.key for combo in model.combos])
    frame["crisp"] = model.crisp
    frame.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")


def load_cluster_table(path: Path | str) -> ClusterModel:
    """
    Read a table written by save_cluster_table

    Raises:
        DataError: Malformed table or membership rows not summing to 1
    """

    try:
        frame = pd.read_csv(path, sep="\t", dtype={"combo": str}, keep_default_na=False)
        columns = [c for c in frame.columns if c.startswith("m")]
        membership = frame[columns].to_numpy(dtype=np.float64)
        combos = tuple(TagCombo.parse(key) for key in frame["combo"])
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"cannot read cluster table {path}: {e}") from e

    if len(columns) < 2 or not np.allclose(membership.sum(axis=1), 1.0, atol=1e-9):
        raise DataError(f"{path}: membership rows must cover 2+ clusters and sum to 1")
    model = ClusterModel(combos, membership)
    if "crisp" in frame and not np.array_equal(model.crisp, frame["crisp"].to_numpy()):
        raise DataError(f"{path}: crisp column disagrees with memberships")
    return model
