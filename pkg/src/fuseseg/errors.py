"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError/ContractError -> 1 (usage),
ParseError/DegenerateInputError -> 2 (data), NumericError -> 3.
"""


class FusesegError(Exception):
    pass


class DimensionError(FusesegError):
    """Tensor or volume shapes are incompatible with the requested operation."""


class ConfigError(FusesegError):
    """Invalid configuration value or combination."""


class ContractError(FusesegError):
    """A documented precondition was violated by the caller."""


class ParseError(FusesegError):
    """Malformed on-disk data. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateInputError(FusesegError):
    """Input data lacks the variation the operation requires (e.g. zero variance)."""


class NumericError(FusesegError):
    """A non-finite value appeared where finite numbers are required."""
