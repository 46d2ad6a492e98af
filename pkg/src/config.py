"""
Application configuration for the knowledge-tracing engine
"""

import os

from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Engine settings"""

    # Logging Configuration
    log_level: str = Field(
        default="INFO",
        validation_alias=AliasChoices("LKT_ENGINE_LOG", "log_level"),
    )

    # Execution Configuration
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    seed: int = Field(default=0)

    # Ingestion Configuration
    max_bad_row_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    offset_horizon_ms: int = Field(default=365 * 24 * 60 * 60 * 1000, gt=0)
    ingest_chunk_rows: int = Field(default=250_000, ge=1)

    # Trainer Configuration
    l2_penalty: float = Field(default=1e-6, ge=0.0)
    tol: float = Field(default=1e-6, gt=0.0)
    max_iter: int = Field(default=1000, ge=1)
    outer_cycles: int = Field(default=3, ge=1)
    search_points_per_param: int = Field(default=12, ge=2)
    gradient_shards: int = Field(default=8, ge=1)
    errordec_passes: int = Field(default=6, ge=2)
    errordec_refit_tol: float = Field(default=1e-4, gt=0.0)
    prediction_clamp: float = Field(default=1e-7, gt=0.0, lt=0.5)
    min_occurrence: int = Field(default=10, ge=0)

    # Clustering Configuration
    fuzzifier: float = Field(default=2.0, gt=1.0)
    default_k: int = Field(default=12, ge=2)

    # Metrics Configuration
    calibration_bins: int = Field(default=20, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="LKT_ENGINE_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()
