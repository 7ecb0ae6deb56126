"""Exception types shared across the package."""


class AbramError(Exception):
    """Base class for all package errors."""


class InvalidInputError(AbramError, ValueError):
    """Input is malformed (non-finite, wrong shape, empty)."""


class PreconditionError(AbramError, ValueError):
    """An operation was called outside its documented domain."""


class ConfigError(AbramError, ValueError):
    """Configuration is invalid or contains unknown keys."""


class ParseError(AbramError, ValueError):
    """A data file could not be parsed.

    ``offset`` is the byte offset (binary formats) or ``None``.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class DivergenceError(AbramError, ArithmeticError):
    """A simulation produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
