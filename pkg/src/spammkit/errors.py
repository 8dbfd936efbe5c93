"""Exception hierarchy shared by all spammkit modules."""


class SpammError(Exception):
    """Base class for every error raised by spammkit."""


class ConfigError(SpammError, ValueError):
    """Invalid configuration: block sizes, worker counts and similar knobs."""


class InputError(SpammError, ValueError):
    """Invalid input data or arguments (shapes, thresholds, indices)."""


class ParseError(SpammError, ValueError):
    """Malformed Matrix Market file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFormatError(SpammError, ValueError):
    """A syntactically valid file in a variant we do not read."""


class StateError(SpammError, RuntimeError):
    """Operation requested in the wrong engine state."""


class SizeError(SpammError, MemoryError):
    """Refused because the dense representation would be too large."""
