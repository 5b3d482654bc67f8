"""Exception hierarchy shared by all fedsense modules."""


class FedsenseError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(FedsenseError, ValueError):
    """An invalid specification, configuration or parameter combination."""


class DomainError(FedsenseError, ValueError):
    """An argument lies outside the domain of an operation."""


class ParseError(FedsenseError, ValueError):
    """A dataset or config file could not be parsed.

    ``line`` is the 1-based line number of the offending row, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(FedsenseError):
    """Raised when a model cannot be fit on the data it was given."""


class StateError(FedsenseError):
    """An object is used before it is ready (e.g. an untrained device)."""
