"""Exception kinds raised by the pipeline, each mapped to a CLI exit code."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class CellfenceError(Exception):
    """Base class for all pipeline errors."""
    exit_code = EXIT_RUNTIME


class InvalidParameterError(CellfenceError, ValueError):
    pass


class InvalidAllocationError(CellfenceError, ValueError):
    pass


class DegenerateGeometryError(CellfenceError, ValueError):
    pass


class StaleRangeError(CellfenceError):
    """Requested samples were already overwritten in the ring buffer."""


class RetryLaterError(CellfenceError):
    """Requested samples are not fully ingested yet."""


class IllegalTransitionError(CellfenceError):
    pass


class EmptyStatisticsError(CellfenceError, ValueError):
    pass


class TrainingError(CellfenceError):
    pass


class ModelFitError(CellfenceError):
    pass


class ConfigurationError(CellfenceError):
    exit_code = EXIT_CONFIG


class ScenarioError(ConfigurationError):
    """Invalid scenario file; carries the offending field path or line."""

    def __init__(self, message, field=None, line=None, column=None):
        self.field = field
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if field is not None:
            where.append(f"field '{field}'")
        if where:
            message = f"{message} ({'; '.join(where)})"
        super().__init__(message)


class DatasetError(ConfigurationError):
    pass


class ModelFormatError(ConfigurationError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelDimensionError(ConfigurationError):
    pass


class WireFormatError(CellfenceError, ValueError):
    """A bus frame could not be decoded."""
