"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or mismatches the data."""


class StateError(RuntimeError):
    """An operation was called in a state it does not support."""


class ParseError(ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantViolation(RuntimeError):
    """A runtime check of a structural invariant failed."""
