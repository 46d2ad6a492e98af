"""
Error hierarchy for the knowledge-tracing engine

Each error carries the process exit code the CLI reports for it.
"""


class LktError(Exception):
    """Base class for all engine errors"""

    exit_code = 1


class ConfigError(LktError):
    """Invalid configuration file or command-line flag"""

    exit_code = 2


class ParameterError(ConfigError, ValueError):
    """Illegal parameter passed to an operation"""


class DataError(LktError):
    """Input data cannot be processed"""

    exit_code = 3


class SchemaError(DataError):
    """Required column missing from an input file"""


class RowLimitError(DataError):
    """Too many malformed rows to continue"""


class OrderingError(DataError, ValueError):
    """Events presented out of time order"""


class CatalogError(DataError, KeyError):
    """Feature instance unknown to the column catalog"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ModelError(DataError):
    """Model file or model/catalog mismatch"""


class InsufficientDataError(DataError):
    """Not enough data to compute the requested result"""


class DegenerateLabelsError(DataError):
    """Labels contain a single class"""


class UndefinedMetricError(DataError):
    """Metric undefined for the given labels"""


class NumericalError(LktError):
    """Numerical procedure failed"""

    exit_code = 4
