"""
Prediction metrics
"""

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import rankdata

from src.config import settings
from src.models.report import CalibrationBin, EvalReport
from src.utils.errors import ParameterError, UndefinedMetricError


def _pair(predictions: ArrayLike, labels: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ParameterError(f"predictions {p.shape} and labels {y.shape} must be equal-length vectors")
    return p, y


def auc(predictions: ArrayLike, labels: ArrayLike) -> float:
    """
    Probability that a random positive outranks a random negative, ties 0.5

    Mann-Whitney statistic from average ranks.

    Raises:
        UndefinedMetricError: Only one class present
    """

    p, y = _pair(predictions, labels)
    positive = y == 1
    n_pos = int(positive.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes ({n_pos} positive, {n_neg} negative)")

    ranks = rankdata(p, method="average")
    # average ranks are multiples of 0.5, so this sum is exact
    u = float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def log_loss(predictions: ArrayLike, labels: ArrayLike, clamp: float | None = None) -> float:
    """Mean of -[y ln p + (1 - y) ln(1 - p)], predictions clamped to [c, 1 - c]"""

    p, y = _pair(predictions, labels)
    if len(p) == 0:
        raise UndefinedMetricError("log-loss of an empty set")
    c = settings.prediction_clamp if clamp is None else clamp
    p = np.clip(p, c, 1.0 - c)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def threshold_agreement(preds_a: ArrayLike, preds_b: ArrayLike, threshold: float) -> float:
    """Fraction of positions where both sets fall on the same side of threshold"""

    a = np.asarray(preds_a, dtype=np.float64)
    b = np.asarray(preds_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"prediction sets differ in length: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise UndefinedMetricError("agreement of empty prediction sets")
    return float(np.mean((a > threshold) == (b > threshold)))


def calibration(predictions: ArrayLike, labels: ArrayLike, bins: int | None = None) -> list[CalibrationBin]:
    """Equal-width bins over [0, 1]; the last bin is closed on the right"""

    p, y = _pair(predictions, labels)
    bins = settings.calibration_bins if bins is None else bins
    if bins < 1:
        raise ParameterError(f"bins must be at least 1, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)
    index = np.clip(np.floor(p * bins).astype(np.int64), 0, bins - 1)

    result = []
    for j in range(bins):
        mask = index == j
        count = int(mask.sum())
        result.append(
            CalibrationBin(
                lower=float(edges[j]),
                upper=float(edges[j + 1]),
                mean_prediction=float(p[mask].mean()) if count else None,
                empirical_rate=float(y[mask].mean()) if count else None,
                count=count,
            )
        )
    return result


def evaluate(
    predictions: ArrayLike, labels: ArrayLike, bins: int | None = None, label: str = "evaluation"
) -> EvalReport:
    """AUC, log-loss and calibration in one report"""

    p, y = _pair(predictions, labels)
    return EvalReport(
        auc=auc(p, y),
        log_loss=log_loss(p, y),
        n=len(p),
        calibration=calibration(p, y, bins),
        label=label,
    )
