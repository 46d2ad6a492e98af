"""
Domain-model clustering records
"""

from dataclasses import dataclass, field

import numpy as np

from src.models.features import TagCombo

# Crisp cluster reported for combos the model has never seen
UNASSIGNED_CLUSTER = -1


@dataclass(frozen=True)
class ComboPerformanceMatrix:
    """Pairwise covariance of per-student mean correctness between tag combos"""

    combos: tuple[TagCombo, ...]
    matrix: np.ndarray
    support: np.ndarray

    @property
    def size(self) -> int:
        return len(self.combos)


@dataclass(frozen=True)
class ClusterModel:
    """Fuzzy membership of each combo in k knowledge components"""

    combos: tuple[TagCombo, ...]
    membership: np.ndarray
    objective_history: tuple[float, ...] = ()
    iterations: int = 0
    index: dict[TagCombo, int] = field(init=False, repr=False, compare=False)
    crisp: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "index", {combo: i for i, combo in enumerate(self.combos)})
        # np.argmax keeps the lowest index on ties
        object.__setattr__(self, "crisp", np.argmax(self.membership, axis=1))

    @property
    def k(self) -> int:
        return int(self.membership.shape[1])

    @property
    def partition_coefficient(self) -> float:
        """Fuzzy partition coefficient: 1 for crisp memberships, 1/k for uniform"""
        if not len(self.combos):
            return 0.0
        return float(np.sum(self.membership**2) / len(self.combos))

    def crisp_of(self, combo: TagCombo) -> int:
        row = self.index.get(combo)
        return UNASSIGNED_CLUSTER if row is None else int(self.crisp[row])
