"""
Feature descriptor and spec models

A FeatureSpec is an ordered list of descriptors, each naming a feature kind,
the level whose history it reads, and any nonlinear parameter it carries.
"""

import tomllib
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.utils.errors import ConfigError


class FeatureKind(str, Enum):
    """Feature kinds"""
    INTERCEPT = "intercept"
    COUNT = "count"
    LOG_COUNT = "log_count"
    RECENCY = "recency"
    RECENCY_WEIGHTED_COUNT = "recency_weighted_count"
    ERRORDEC = "errordec"


class FeatureLevel(str, Enum):
    """History levels a feature can read"""
    ITEM = "item"
    STUDENT = "student"
    PART = "part"
    TAG_COMBO = "tag_combo_in_part"
    CLUSTER = "cluster"
    LECTURE = "lecture"
    OVERALL_SUCCESS = "overall_success"
    OVERALL_FAILURE = "overall_failure"


class Outcome(str, Enum):
    """Which prior attempts a count includes"""
    ALL = "all"
    SUCCESS = "success"
    FAILURE = "failure"


# Levels with a per-student unit table (attempts, last time, weighted counts)
UNIT_LEVELS = frozenset(
    {
        FeatureLevel.ITEM,
        FeatureLevel.STUDENT,
        FeatureLevel.PART,
        FeatureLevel.TAG_COMBO,
        FeatureLevel.CLUSTER,
    }
)

# Levels whose instances may get their own column
INSTANCE_LEVELS = UNIT_LEVELS

# Search intervals for the nonlinear parameters
PARAM_BOUNDS: dict[str, tuple[float, float]] = {
    "d": (0.001, 1.2),
    "w": (0.01, 1.0),
    "dec": (0.01, 1.0),
}

_DEFAULT_PARAM = {"d": 0.5, "w": 0.5, "dec": 0.9}

_PARAM_FOR_KIND = {
    FeatureKind.RECENCY: "d",
    FeatureKind.RECENCY_WEIGHTED_COUNT: "w",
    FeatureKind.ERRORDEC: "dec",
}


@dataclass(frozen=True, slots=True, order=True)
class TagCombo:
    """A unique tag combination nested within a part"""

    part: int
    tags: tuple[int, ...]

    @property
    def key(self) -> str:
        return f"{self.part}:{' '.join(map(str, self.tags))}"

    @classmethod
    def parse(cls, key: str) -> "TagCombo":
        part, _, tags = key.partition(":")
        return cls(int(part), tuple(int(tag) for tag in tags.split()))


class FeatureDescriptor(BaseModel):
    """One feature of a learner model"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., min_length=1)
    kind: FeatureKind
    level: FeatureLevel
    d: float | None = None
    w: float | None = None
    dec: float | None = None
    outcome: Outcome = Outcome.ALL
    per_instance: bool = False
    min_occurrence: int | None = Field(default=None, ge=0)
    fallback: bool = True

    @model_validator(mode="before")
    @classmethod
    def fill_param_default(cls, data: Any) -> Any:
        if isinstance(data, dict):
            try:
                param = _PARAM_FOR_KIND.get(FeatureKind(data.get("kind")))
            except ValueError:
                return data
            if param is not None and data.get(param) is None:
                data = {**data, param: _DEFAULT_PARAM[param]}
        return data

    @model_validator(mode="after")
    def check_kind_level(self) -> "FeatureDescriptor":
        kind, level = self.kind, self.level
        param = _PARAM_FOR_KIND.get(kind)

        for other in ("d", "w", "dec"):
            if other != param and getattr(self, other) is not None:
                raise ValueError(f"{self.name}: parameter '{other}' not used by {kind.value}")

        if self.d is not None and self.d <= 0:
            raise ValueError(f"{self.name}: decay exponent d must be > 0")
        for name in ("w", "dec"):
            value = getattr(self, name)
            if value is not None and not 0 < value <= 1:
                raise ValueError(f"{self.name}: {name} must be in (0, 1]")

        if kind is FeatureKind.INTERCEPT and level not in INSTANCE_LEVELS:
            raise ValueError(f"{self.name}: intercepts need an instance level, not {level.value}")
        if kind in (FeatureKind.RECENCY, FeatureKind.RECENCY_WEIGHTED_COUNT) and level not in UNIT_LEVELS:
            raise ValueError(f"{self.name}: {kind.value} needs a unit level, not {level.value}")
        if kind is FeatureKind.ERRORDEC and level is not FeatureLevel.STUDENT:
            raise ValueError(f"{self.name}: errordec is a student-level feature")
        if self.outcome is not Outcome.ALL and (
            kind not in (FeatureKind.COUNT, FeatureKind.LOG_COUNT) or level not in UNIT_LEVELS
        ):
            raise ValueError(f"{self.name}: outcome filter applies to unit-level counts only")
        if self.per_instance and (
            kind in (FeatureKind.INTERCEPT, FeatureKind.ERRORDEC) or level not in INSTANCE_LEVELS
        ):
            raise ValueError(f"{self.name}: per_instance not available for this kind/level")
        return self

    @property
    def instance_based(self) -> bool:
        """True when the descriptor owns one column per level instance"""
        return self.kind is FeatureKind.INTERCEPT or self.per_instance

    @property
    def param_name(self) -> str | None:
        return _PARAM_FOR_KIND.get(self.kind)

    @property
    def param_value(self) -> float | None:
        name = self.param_name
        return None if name is None else getattr(self, name)


class FeatureSpec(BaseModel):
    """Declarative, ordered feature list"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "model"
    descriptors: tuple[FeatureDescriptor, ...] = ()

    @model_validator(mode="after")
    def check_descriptors(self) -> "FeatureSpec":
        names = [descriptor.name for descriptor in self.descriptors]
        if len(set(names)) != len(names):
            raise ValueError("descriptor names must be unique")
        if sum(d.kind is FeatureKind.ERRORDEC for d in self.descriptors) > 1:
            raise ValueError("at most one errordec descriptor is allowed")
        return self

    @property
    def errordec(self) -> FeatureDescriptor | None:
        for descriptor in self.descriptors:
            if descriptor.kind is FeatureKind.ERRORDEC:
                return descriptor
        return None

    @property
    def uses_clusters(self) -> bool:
        return any(d.level is FeatureLevel.CLUSTER for d in self.descriptors)

    def nonlinear_params(self) -> dict[str, float]:
        """Current nonlinear parameter values keyed '<descriptor>.<param>'"""

        params: dict[str, float] = {}
        for descriptor in self.descriptors:
            if descriptor.param_name is not None:
                params[f"{descriptor.name}.{descriptor.param_name}"] = float(
                    descriptor.param_value  # type: ignore[arg-type]
                )
        return params

    def with_params(self, values: Mapping[str, float]) -> "FeatureSpec":
        """Copy with some nonlinear parameters replaced"""

        known = self.nonlinear_params()
        unknown = set(values) - set(known)
        if unknown:
            raise KeyError(f"unknown nonlinear parameters: {sorted(unknown)}")

        descriptors = []
        for descriptor in self.descriptors:
            key = f"{descriptor.name}.{descriptor.param_name}"
            if key in values:
                descriptor = descriptor.model_copy(update={descriptor.param_name: float(values[key])})
            descriptors.append(descriptor)
        return self.model_copy(update={"descriptors": tuple(descriptors)})

    @classmethod
    def from_mapping(cls, document: Mapping[str, Any]) -> "FeatureSpec":
        """Build from the parsed TOML layout: name plus one [features.<name>] table each"""

        features = document.get("features", {})
        if not isinstance(features, Mapping):
            raise ConfigError("'features' must be a table of feature tables")
        try:
            return cls(
                name=document.get("name", "model"),
                descriptors=tuple(
                    FeatureDescriptor(name=name, **dict(body)) for name, body in features.items()
                ),
            )
        except (ValidationError, TypeError) as e:
            raise ConfigError(f"invalid feature spec: {e}") from e

    @classmethod
    def from_toml(cls, path: Path | str) -> "FeatureSpec":
        try:
            with open(path, "rb") as handle:
                document = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read feature spec {path}: {e}") from e
        return cls.from_mapping(document)
