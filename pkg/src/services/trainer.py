"""
Penalized logistic-regression trainer

The inner fit minimizes mean log-loss + l2/2 * ||beta||^2 (bias unpenalized)
with L-BFGS-B. The gradient is accumulated over a fixed number of row shards
and reduced in shard order, so results do not depend on the worker count.
The outer search tunes nonlinear feature parameters one coordinate at a time
with a bounded scalar search, refitting the inner model at each candidate.
"""

import logging
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, sparse
from scipy.special import expit

from src.config import settings
from src.models.clustering import ClusterModel
from src.models.events import EventLog
from src.models.features import PARAM_BOUNDS, FeatureSpec
from src.models.model import FitDiagnostics, FittedModel, SearchPoint, TrainingRun
from src.services.design import DesignTemplate, build_catalog, build_template
from src.utils.errors import (
    DegenerateLabelsError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
)
from src.utils.logging import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()

# L-BFGS-B relative-reduction stop at machine precision; gtol does the stopping
_FTOL = 10 * np.finfo(np.float64).eps
_XATOL = 1e-4


@dataclass(frozen=True)
class LinearFit:
    """Result of one inner fit"""

    bias: float
    coefficients: np.ndarray
    diagnostics: FitDiagnostics

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate(([self.bias], self.coefficients))


class LogisticObjective:
    """
    Penalized mean log-loss and its gradient over theta = (bias, beta)

    Rows are split into a fixed number of contiguous shards; per-shard sums
    are always added in shard order.
    """

    def __init__(
        self,
        design: sparse.csr_matrix,
        labels: np.ndarray,
        l2_penalty: float,
        shards: int = 1,
        mapper: Callable[..., Iterable] = map,
    ) -> None:
        self.n_rows, self.n_columns = design.shape
        self.l2_penalty = l2_penalty
        self.mapper = mapper

        bounds = np.linspace(0, self.n_rows, min(shards, max(self.n_rows, 1)) + 1).astype(np.int64)
        self.shards = []
        for lo, hi in zip(bounds[:-1].tolist(), bounds[1:].tolist(), strict=True):
            if hi > lo:
                block = design[lo:hi]
                self.shards.append((block, block.T.tocsr(), labels[lo:hi]))

    @staticmethod
    def _shard_terms(
        shard: tuple[sparse.csr_matrix, sparse.csr_matrix, np.ndarray], bias: float, beta: np.ndarray
    ) -> tuple[float, float, np.ndarray]:
        block, transposed, labels = shard
        z = block @ beta + bias
        loss = float(np.sum(np.logaddexp(0.0, z) - labels * z))
        residual = expit(z) - labels
        return loss, float(np.sum(residual)), transposed @ residual

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        bias, beta = float(theta[0]), theta[1:]
        loss_sum = 0.0
        bias_grad = 0.0
        beta_grad = np.zeros(self.n_columns)
        for loss, residual_sum, column_sums in self.mapper(
            lambda shard: self._shard_terms(shard, bias, beta), self.shards
        ):
            loss_sum += loss
            bias_grad += residual_sum
            beta_grad += column_sums

        n = self.n_rows
        value = loss_sum / n + 0.5 * self.l2_penalty * float(beta @ beta)
        gradient = np.concatenate(([bias_grad / n], beta_grad / n + self.l2_penalty * beta))
        return value, gradient

    def log_loss(self, theta: np.ndarray) -> float:
        """Unpenalized mean log-loss"""
        value, _ = self(theta)
        beta = theta[1:]
        return value - 0.5 * self.l2_penalty * float(beta @ beta)


class LogisticTrainer:
    """Fits learner models under one TrainingRun"""

    def __init__(self, run: TrainingRun | None = None) -> None:
        self.run = run or TrainingRun()

    @contextmanager
    def _mapper(self) -> Iterator[Callable[..., Iterable]]:
        if self.run.workers == 1:
            yield map
            return
        with ThreadPoolExecutor(max_workers=self.run.workers) as pool:
            yield pool.map

    def fit_linear(
        self, design: sparse.csr_matrix, labels: np.ndarray, init: np.ndarray | None = None
    ) -> LinearFit:
        """
        Penalized maximum-likelihood bias and coefficients

        Raises:
            InsufficientDataError: No rows
            DegenerateLabelsError: Only one label class present
            NumericalError: Objective became non-finite
        """

        n_rows, n_columns = design.shape
        if n_rows == 0:
            raise InsufficientDataError("no training rows")
        labels = np.asarray(labels, dtype=np.float64)
        positives = float(labels.sum())
        if positives == 0 or positives == n_rows:
            raise DegenerateLabelsError(f"all {n_rows} labels are {int(labels[0])}")

        if init is None:
            rate = positives / n_rows
            init = np.zeros(n_columns + 1)
            init[0] = np.log(rate / (1.0 - rate))

        loss_history: list[float] = []

        def record(intermediate_result: optimize.OptimizeResult) -> None:
            loss_history.append(float(intermediate_result.fun))

        with self._mapper() as mapper:
            objective = LogisticObjective(design, labels, self.run.l2_penalty, self.run.shards, mapper)
            result = optimize.minimize(
                objective,
                np.asarray(init, dtype=np.float64),
                jac=True,
                method="L-BFGS-B",
                callback=record,
                options={"maxiter": self.run.max_iter, "gtol": self.run.tol, "ftol": _FTOL},
            )
            if not np.isfinite(result.fun):
                raise NumericalError(f"log-loss objective is not finite: {result.message}")
            loss = objective.log_loss(result.x)

        gradient_norm = float(np.max(np.abs(result.jac))) if result.jac is not None else float("nan")
        converged = bool(result.success)
        if not converged:
            logger.warning(
                f"Linear fit stopped without converging after {result.nit} iterations: "
                f"{result.message}; gradient norm {gradient_norm:.3e}, objective {result.fun:.6f}"
            )
        perf_logger.log_linear_fit(n_rows, n_columns, int(result.nit), loss, converged)

        diagnostics = FitDiagnostics(
            loss=loss,
            objective=float(result.fun),
            iterations=int(result.nit),
            converged=converged,
            gradient_norm=gradient_norm,
            loss_history=tuple(loss_history),
            message=str(result.message),
        )
        return LinearFit(float(result.x[0]), np.array(result.x[1:]), diagnostics)

    def fit_template(self, template: DesignTemplate, search: bool = True) -> FittedModel:
        """
        Fit a model from a design template

        Specs with errordec take at least two passes: the first fits with the
        errordec column at zero, the second feeds the first pass's in-sample
        predictions through errordec and refits. Each further pass rebuilds
        errordec from the previous pass's predictions, which already include
        errordec, until the mean prediction change drops below
        errordec_refit_tol or errordec_passes is reached. The fixed point is
        a model whose errordec column is built from its own predictions, as
        at serving time. With search, every pass also tunes the nonlinear
        parameters it can see.
        """

        spec = template.spec
        errordec = spec.errordec
        keys = list(spec.nonlinear_params())
        first_keys = [k for k in keys if errordec is None or k != _param_key(errordec.name, "dec")]

        search_state = _OuterSearch(self, template)
        best_spec, fit = search_state.run(spec, first_keys if search else [], errors=None, stage=1)

        if errordec is not None:
            clamp = settings.prediction_clamp
            errors: np.ndarray | None = None
            for stage in range(2, self.run.errordec_passes + 1):
                design = template.materialize(best_spec, errors)
                predictions = np.clip(expit(design @ fit.coefficients + fit.bias), clamp, 1.0 - clamp)
                refreshed = predictions - template.labels
                if errors is not None:
                    change = float(np.mean(np.abs(refreshed - errors)))
                    logger.info(f"errordec pass {stage - 1}: mean prediction change {change:.3e}")
                    if change < self.run.errordec_refit_tol:
                        break
                errors = refreshed
                best_spec, fit = search_state.run(best_spec, keys if search else [], errors=errors, stage=stage)

        diagnostics = replace(fit.diagnostics, search_points=tuple(search_state.search_points))
        return FittedModel(fit.bias, fit.coefficients, best_spec, template.catalog, diagnostics)


class _OuterSearch:
    """Coordinate-wise bounded scalar search with memoized fits"""

    def __init__(self, trainer: LogisticTrainer, template: DesignTemplate) -> None:
        self.trainer = trainer
        self.template = template
        self.search_points: list[SearchPoint] = []
        self._memo: dict[tuple, LinearFit] = {}
        self._warm: np.ndarray | None = None

    def run(
        self, spec: FeatureSpec, keys: list[str], errors: np.ndarray | None, stage: int
    ) -> tuple[FeatureSpec, LinearFit]:
        run = self.trainer.run
        best_values = spec.nonlinear_params()
        best_fit = self._evaluate(spec, best_values, errors, stage)

        def loss_at(values: dict[str, float]) -> float:
            nonlocal best_values, best_fit
            fit = self._evaluate(spec, values, errors, stage)
            if fit.diagnostics.loss < best_fit.diagnostics.loss:
                best_values, best_fit = values, fit
                self._warm = fit.theta
            return fit.diagnostics.loss

        for cycle in range(run.outer_cycles if keys else 0):
            start_loss = best_fit.diagnostics.loss
            for key in keys:
                lo, hi = PARAM_BOUNDS[key.rsplit(".", 1)[1]]
                base = dict(best_values)
                optimize.minimize_scalar(
                    lambda value, key=key, base=base: loss_at({**base, key: float(value)}),
                    bounds=(lo, hi),
                    method="bounded",
                    options={"maxiter": run.search_points_per_param, "xatol": _XATOL},
                )
            improvement = start_loss - best_fit.diagnostics.loss
            logger.info(
                f"Outer search stage {stage} cycle {cycle + 1}: log-loss {best_fit.diagnostics.loss:.6f}, "
                f"params {best_values}"
            )
            if improvement < run.tol:
                break

        return spec.with_params(best_values), best_fit

    def _evaluate(
        self, spec: FeatureSpec, values: dict[str, float], errors: np.ndarray | None, stage: int
    ) -> LinearFit:
        key = (stage, tuple(sorted(values.items())))
        cached = self._memo.get(key)
        if cached is not None:
            return cached

        design = self.template.materialize(spec.with_params(values), errors)
        fit = self.trainer.fit_linear(design, self.template.labels, init=self._warm)
        if self._warm is None:
            self._warm = fit.theta
        self._memo[key] = fit
        self.search_points.append(SearchPoint(dict(values), fit.diagnostics.loss, stage))
        for name, value in values.items():
            perf_logger.log_search_point(name, value, fit.diagnostics.loss)
        return fit


def _param_key(descriptor: str, param: str) -> str:
    return f"{descriptor}.{param}"


def fit_linear(
    design: sparse.csr_matrix,
    labels: np.ndarray,
    run: TrainingRun | None = None,
    init: np.ndarray | None = None,
) -> LinearFit:
    """Penalized logistic fit of one design matrix"""
    return LogisticTrainer(run).fit_linear(design, labels, init)


def fit_nonlinear(
    train: EventLog,
    spec: FeatureSpec,
    run: TrainingRun | None = None,
    clusters: ClusterModel | None = None,
    min_occurrence: int | None = None,
) -> FittedModel:
    """
    Fit coefficients and search every nonlinear parameter of spec

    Raises:
        ParameterError: spec has no nonlinear parameter, or the outer budget is below one cycle
    """

    run = run or TrainingRun()
    if not spec.nonlinear_params():
        raise ParameterError(f"spec '{spec.name}' has no nonlinear parameters to search")
    if run.outer_cycles < 1:
        raise ParameterError(f"outer search budget must be at least 1 cycle, got {run.outer_cycles}")

    catalog = build_catalog(train, spec, clusters, min_occurrence)
    template = build_template(train, spec, catalog)
    with perf_logger.timed("NonlinearFit", spec=spec.name, rows=template.n_rows) as timing:
        model = LogisticTrainer(run).fit_template(template, search=True)
        timing["search_points"] = len(model.diagnostics.search_points)
    return model


def fit_model(
    train: EventLog,
    spec: FeatureSpec,
    run: TrainingRun | None = None,
    clusters: ClusterModel | None = None,
    min_occurrence: int | None = None,
    search: bool = True,
) -> FittedModel:
    """Fit spec, searching nonlinear parameters when it has any and search is on"""

    if search and spec.nonlinear_params():
        return fit_nonlinear(train, spec, run, clusters, min_occurrence)

    catalog = build_catalog(train, spec, clusters, min_occurrence)
    template = build_template(train, spec, catalog)
    with perf_logger.timed("Fit", spec=spec.name, rows=template.n_rows):
        return LogisticTrainer(run).fit_template(template, search=False)
