"""Exception hierarchy shared by every part of the package."""


class NCAEError(Exception):
    """Base class for all package errors."""


class DimensionError(NCAEError, ValueError):
    pass


class NumericError(NCAEError, ArithmeticError):
    pass


class ConfigError(NCAEError, ValueError):
    pass


class DataError(NCAEError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EvalError(NCAEError, ValueError):
    pass


class CompatibilityError(NCAEError, ValueError):
    """Checkpoint and dataset disagree on dimensions or index maps."""


class UnknownUserError(NCAEError, KeyError):
    pass
