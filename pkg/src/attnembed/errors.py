"""Exception types shared across the package."""


class AttnEmbedError(Exception):
    """Base class for package errors."""


class DimensionError(AttnEmbedError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(AttnEmbedError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ContractError(AttnEmbedError, RuntimeError):
    """An operation was called outside its contract."""


class ConfigError(AttnEmbedError, ValueError):
    """A configuration value violates its invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(AttnEmbedError, ValueError):
    """Input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        text = f"line {line}: {message}" if line is not None else message
        super().__init__(text)
        self.line = line
