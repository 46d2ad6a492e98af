"""
Per-student incremental history state
"""

from dataclasses import dataclass, field

from src.models.clustering import ClusterModel
from src.models.features import FeatureKind, FeatureSpec, TagCombo


@dataclass(slots=True)
class UnitState:
    """Prior practice of one unit (item, part, combo, cluster or the student overall)"""

    attempts: int = 0
    successes: int = 0
    failures: int = 0
    last_time_ms: int | None = None
    # recency-weighted attempt count per weight w
    weighted: dict[float, float] = field(default_factory=dict)


@dataclass
class StudentHistory:
    """Everything the feature engine knows about one student's past"""

    overall: UnitState = field(default_factory=UnitState)
    lecture_count: int = 0
    items: dict[str, UnitState] = field(default_factory=dict)
    parts: dict[int, UnitState] = field(default_factory=dict)
    combos: dict[TagCombo, UnitState] = field(default_factory=dict)
    clusters: dict[int, UnitState] = field(default_factory=dict)
    errordec_state: float = 0.0
    prediction_count: int = 0
    last_event_ms: int | None = None


@dataclass(frozen=True)
class HistoryParams:
    """Parameters that shape how history accumulates"""

    weights: tuple[float, ...] = ()
    dec: float = 1.0
    clusters: ClusterModel | None = None

    @classmethod
    def from_spec(cls, spec: FeatureSpec, clusters: ClusterModel | None = None) -> "HistoryParams":
        weights = sorted(
            {
                float(d.w)  # type: ignore[arg-type]
                for d in spec.descriptors
                if d.kind is FeatureKind.RECENCY_WEIGHTED_COUNT
            }
        )
        errordec = spec.errordec
        return cls(
            weights=tuple(weights),
            dec=1.0 if errordec is None else float(errordec.dec),  # type: ignore[arg-type]
            clusters=clusters,
        )
