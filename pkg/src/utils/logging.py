"""
Logging configuration for the knowledge-tracing engine
"""

import logging
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any


def setup_logging(level: str = "INFO") -> None:
    """Configure engine logging; everything goes to standard error"""

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )

    # Numerical libraries are chatty at DEBUG
    logging.getLogger("numexpr").setLevel(logging.WARNING)


class PerformanceLogger:
    """Logger for stage timings and sizes"""

    def __init__(self) -> None:
        self.logger = logging.getLogger("performance")

    @contextmanager
    def timed(self, stage: str, **details: Any) -> Iterator[dict[str, Any]]:
        """Time a stage; callers may add fields to the yielded dict"""

        start_time = time.perf_counter()
        extra: dict[str, Any] = dict(details)
        try:
            yield extra
        finally:
            elapsed_ms = (time.perf_counter() - start_time) * 1000
            fields = ", ".join(f"{key}: {value}" for key, value in extra.items())
            self.logger.info(
                f"{stage} - {fields}{', ' if fields else ''}Time: {elapsed_ms:.2f}ms"
            )

    def log_ingest(self, rows: int, kept: int, bad_rows: int, tie_bumps: int) -> None:
        """Log ingestion counts"""

        self.logger.info(
            f"Ingest - Rows: {rows}, Kept: {kept}, "
            f"BadRows: {bad_rows}, TieBumps: {tie_bumps}"
        )

    def log_linear_fit(
        self,
        rows: int,
        columns: int,
        iterations: int,
        loss: float,
        converged: bool,
    ) -> None:
        """Log a single inner logistic fit"""

        self.logger.info(
            f"LinearFit - Rows: {rows}, Columns: {columns}, "
            f"Iterations: {iterations}, LogLoss: {loss:.6f}, Converged: {converged}"
        )

    def log_search_point(self, name: str, value: float, loss: float) -> None:
        """Log one outer-search candidate"""

        self.logger.debug(f"Search - {name}={value:.5f}, LogLoss: {loss:.6f}")

    def log_validation_error(self, error_type: str, details: dict[str, Any]) -> None:
        """Log validation errors"""

        self.logger.warning(f"Validation Error - Type: {error_type}, Details: {details}")
