"""
Pedagogical decision rule and simulation models
"""

import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.utils.errors import ConfigError
from src.utils.validators import PART_RANGE


class MasteryRule(BaseModel):
    """Practice the weakest item until every item's prediction exceeds threshold"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["mastery"] = "mastery"
    threshold: float = Field(default=0.95, gt=0.0, lt=1.0)

    @property
    def label(self) -> str:
        return f"mastery({self.threshold:g})"


class DropNRule(BaseModel):
    """Round-robin over items not yet answered correctly n times in a row"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["drop_n"] = "drop_n"
    n: int = Field(default=3, ge=1)

    @property
    def label(self) -> str:
        return f"drop_n({self.n})"


class TargetDifficultyRule(BaseModel):
    """Practice the item whose prediction is closest to p_star"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["target_difficulty"] = "target_difficulty"
    p_star: float = Field(default=0.86, gt=0.0, lt=1.0)

    @property
    def label(self) -> str:
        return f"target_difficulty({self.p_star:g})"


Rule = Annotated[MasteryRule | DropNRule | TargetDifficultyRule, Field(discriminator="kind")]


class PoolItem(BaseModel):
    """One practice item and the combo it belongs to"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    item_id: str = Field(..., min_length=1)
    part: int
    tags: tuple[int, ...] = ()

    @field_validator("part")
    @classmethod
    def check_part(cls, value: int) -> int:
        if value not in PART_RANGE:
            raise ValueError(f"part {value} outside 1..7")
        return value

    @field_validator("tags")
    @classmethod
    def canonical(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(sorted(set(value)))


class PdrConfig(BaseModel):
    """A decision rule with its time costs and budget"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rule: Rule
    success_duration_ms: int = Field(default=20_000, gt=0)
    failure_duration_multiplier: float = Field(default=1.16, ge=1.0)
    # charged on failures only
    feedback_duration_ms: int = Field(default=8_000, ge=0)
    time_budget_ms: int = Field(default=30 * 60 * 1000, gt=0)
    pool: tuple[PoolItem, ...] = ()
    # ground-truth probability counted as mastered at the delayed test
    mastery_criterion: float = Field(default=0.95, gt=0.0, lt=1.0)
    retention_interval_ms: int = Field(default=24 * 60 * 60 * 1000, ge=0)

    @property
    def failure_cost_ms(self) -> int:
        return round(self.success_duration_ms * self.failure_duration_multiplier) + self.feedback_duration_ms

    @property
    def label(self) -> str:
        return self.rule.label


class PopulationSpec(BaseModel):
    """Generative family of simulated students and their item pool"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_items: int = Field(default=20, ge=1)
    item_mean: float = 0.0
    item_sd: float = Field(default=1.5, ge=0.0)
    ability_sd: float = Field(default=0.5, ge=0.0)
    learning_rate: float = Field(default=0.15, ge=0.0)
    recency_weight: float = Field(default=1.0, ge=0.0)
    decay: float = Field(default=0.5, gt=0.0)
    tags_per_part: int = Field(default=4, ge=1)


class ModelChoice(BaseModel):
    """Where a simulation gets a model: the students' own truth or a model file"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    source: Literal["oracle", "file"] = "oracle"
    d_offset: float = 0.0
    path: Path | None = None


class SimulationConfig(BaseModel):
    """Bundled simulation layout: [simulation], [population], [models.*], [pdrs.*]"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_students: int = Field(default=100, ge=1)
    seed: int = 0
    population: PopulationSpec = Field(default_factory=PopulationSpec)
    models: dict[str, ModelChoice] = Field(default_factory=lambda: {"oracle": ModelChoice()})
    pdrs: dict[str, PdrConfig] = Field(default_factory=dict)

    @classmethod
    def from_toml(cls, path: Path | str) -> "SimulationConfig":
        try:
            with open(path, "rb") as handle:
                document = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read simulation config {path}: {e}") from e
        try:
            return cls(**document.get("simulation", {}), **{k: v for k, v in document.items() if k != "simulation"})
        except (ValidationError, TypeError) as e:
            raise ConfigError(f"invalid simulation config {path}: {e}") from e


@dataclass(frozen=True)
class TrialRecord:
    """One simulated practice trial"""

    index: int
    timestamp_ms: int
    item_id: str
    predictions: dict[str, float]
    predicted: float
    true_probability: float
    correct: bool
    cost_ms: int
    elapsed_ms: int


@dataclass(frozen=True)
class SimOutcome:
    """One student's session under one model and rule"""

    student_id: str
    trace: tuple[TrialRecord, ...]
    elapsed_ms: int
    mastered: int
    start_mean_probability: float
    end_mean_probability: float
    # other model -> (agreeing decisions, decisions compared)
    decision_agreement: dict[str, tuple[int, int]] = field(default_factory=dict)
    threshold_agreement: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len(self.trace)

    @property
    def successes(self) -> int:
        return sum(trial.correct for trial in self.trace)

    @property
    def learning_gain(self) -> float:
        return self.end_mean_probability - self.start_mean_probability


class SummaryRow(BaseModel):
    """Population means for one (model, rule) pair"""

    model: str
    pdr: str
    rule: str
    students: int
    mean_trials: float
    mean_successes: float
    mean_mastered: float
    mean_learning_gain: float
    mean_gain_per_hour: float
    trials_per_minute: float
    decision_agreement: dict[str, float] = Field(default_factory=dict)
    threshold_agreement: dict[str, float] = Field(default_factory=dict)
