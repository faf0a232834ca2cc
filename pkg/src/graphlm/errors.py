"""Exception hierarchy shared across the package."""


class GraphLmError(Exception):
    """Base class for all package errors."""


class ConfigError(GraphLmError):
    """Invalid or inconsistent configuration."""


class DataError(GraphLmError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(DataError):
    """A loaded object violates a structural invariant."""


class DimensionError(GraphLmError):
    """Array shapes do not match what an operation requires."""


class InjectionError(GraphLmError):
    """Graph-token blocks and dummy positions are inconsistent."""


class BudgetError(GraphLmError):
    """A prompt cannot be brought within the token budget."""


class TemplateError(GraphLmError):
    """A prompt template is missing a slot or otherwise unusable."""


class LabelError(GraphLmError):
    """A label is not part of the known class set."""


class TrainingError(GraphLmError):
    """Training diverged or was asked to do something impossible."""


class StateError(GraphLmError):
    """An object was used in the wrong lifecycle state (e.g. unfrozen checkpoint)."""


class ProviderError(GraphLmError):
    """The external embedding provider failed; carries the retry count."""

    def __init__(self, message, retries=0):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries
