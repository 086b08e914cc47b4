"""Exception hierarchy shared across the package."""


class FliotError(Exception):
    """Base class for all library errors."""


class ParameterError(FliotError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(FliotError, ValueError):
    """Array or vector dimensions are inconsistent."""


class RangeError(FliotError, ValueError):
    """A value does not fit the target encoding or plaintext space."""


class KeyMismatchError(FliotError):
    """Ciphertexts or keys belong to different key pairs."""


class AggregationError(FliotError):
    """Updates cannot be combined (mixed keys, lengths or codecs)."""

    def __init__(self, message, round_index=None):
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
        self.round_index = round_index


class SchemaError(FliotError):
    """A CSV file is missing required columns."""


class CsvParseError(FliotError):
    """A CSV cell could not be parsed; carries the 1-based file line number."""

    def __init__(self, message, row):
        super().__init__(f"row {row}: {message}")
        self.row = row


class MetricError(FliotError, ValueError):
    """A metric is undefined for the given input."""


class ConfigError(FliotError):
    """Invalid experiment configuration, optionally tied to a file line."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line
