"""
Trainer configuration and fitted model records
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.config import settings
from src.models.catalog import ColumnCatalog
from src.models.features import FeatureKind, FeatureSpec
from src.models.history import HistoryParams
from src.utils.errors import ModelError


class TrainingRun(BaseModel):
    """Trainer parameters"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    l2_penalty: float = Field(default_factory=lambda: settings.l2_penalty, ge=0.0)
    tol: float = Field(default_factory=lambda: settings.tol, gt=0.0)
    max_iter: int = Field(default_factory=lambda: settings.max_iter, ge=1)
    # checked by fit_nonlinear so a zero budget reports as a parameter error
    outer_cycles: int = Field(default_factory=lambda: settings.outer_cycles)
    search_points_per_param: int = Field(default_factory=lambda: settings.search_points_per_param, ge=2)
    shards: int = Field(default_factory=lambda: settings.gradient_shards, ge=1)
    # pass 1 fits without errordec; later passes rebuild it from the previous fit
    errordec_passes: int = Field(default_factory=lambda: settings.errordec_passes, ge=2)
    errordec_refit_tol: float = Field(default_factory=lambda: settings.errordec_refit_tol, gt=0.0)
    workers: int = Field(default_factory=lambda: settings.workers, ge=1)


class DeliveryPolicy(str, Enum):
    """When correctness of a predicted trial becomes visible to histories"""
    WITHHELD = "withheld"
    IMMEDIATE = "immediate"


@dataclass(frozen=True)
class SearchPoint:
    """One outer-search evaluation"""

    params: dict[str, float]
    loss: float
    stage: int


@dataclass(frozen=True)
class FitDiagnostics:
    """How a fit went"""

    loss: float
    objective: float
    iterations: int
    converged: bool
    gradient_norm: float
    loss_history: tuple[float, ...] = ()
    search_points: tuple[SearchPoint, ...] = ()
    message: str = ""

    def to_dict(self) -> dict[str, object]:
        return {
            "loss": self.loss,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "loss_history": list(self.loss_history),
            "search_points": [{"params": p.params, "loss": p.loss, "stage": p.stage} for p in self.search_points],
            "message": self.message,
        }


@dataclass(frozen=True)
class FittedModel:
    """Immutable fitted learner model; safe to share across threads"""

    bias: float
    coefficients: np.ndarray
    spec: FeatureSpec
    catalog: ColumnCatalog
    diagnostics: FitDiagnostics
    history_params: HistoryParams = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.coefficients.shape != (self.catalog.n_columns,):
            raise ModelError(
                f"{len(self.coefficients)} coefficients for a catalog of {self.catalog.n_columns} columns"
            )
        self.coefficients.setflags(write=False)
        object.__setattr__(self, "history_params", HistoryParams.from_spec(self.spec, self.catalog.clusters))

    @property
    def nonlinear_params(self) -> dict[str, float]:
        return self.spec.nonlinear_params()

    def intercept_columns(self) -> np.ndarray:
        """Indices of every column owned by an intercept descriptor"""

        owners = {i for i, d in enumerate(self.spec.descriptors) if d.kind is FeatureKind.INTERCEPT}
        columns = [c for (i, _), c in self.catalog.instances.items() if i in owners]
        columns += [c for (i, _), c in self.catalog.fallbacks.items() if i in owners]
        return np.array(sorted(columns), dtype=np.int64)
