"""
errors.py
=========
Exception hierarchy shared by every module of the package.

The CLI turns these into one-line diagnostics and exit codes, so each class
carries a short ``kind`` used in that line.
"""


class DiscoError(Exception):
    """Base class for all errors raised by the package."""

    kind = "error"


class DimensionError(DiscoError, ValueError):
    """Shapes or sizes of the inputs do not agree."""

    kind = "dimension"


class LengthError(DiscoError, ValueError):
    """A sentence or batch is longer than the configured limit."""

    kind = "length"


class TokenIndexError(DiscoError, IndexError):
    """A token id does not resolve in its vocabulary."""

    kind = "index"


class ValidationError(DiscoError, ValueError):
    """An argument value is outside its documented domain."""

    kind = "validation"


class ConfigError(ValidationError):
    """A configuration document violates the schema."""

    kind = "config"


class FormatError(DiscoError, ValueError):
    """A file on disk is malformed; the message names the file and line."""

    kind = "format"

    def __init__(self, message, path=None, line=None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class NonFiniteError(DiscoError, FloatingPointError):
    """A tensor or gradient contains NaN or Inf."""

    kind = "non-finite"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UsageError(DiscoError):
    """The command line was used incorrectly."""

    kind = "usage"
