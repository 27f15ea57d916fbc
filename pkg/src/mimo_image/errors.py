"""Exception hierarchy shared by all modules."""


class MimoImageError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(MimoImageError, ValueError):
    """A parameter is outside the range an operation supports."""


class ShapeError(MimoImageError, ValueError):
    """Array dimensions are inconsistent with each other."""


class InputLengthError(MimoImageError, ValueError):
    """A bit stream does not split evenly into symbols or bytes."""


class InvalidSymbolError(MimoImageError, ValueError):
    """A value handed to the demapper is not a constellation point."""


class ContractViolationError(MimoImageError):
    """A caller broke a documented precondition (e.g. infeasible ``u``)."""


class DivergenceError(MimoImageError, ArithmeticError):
    """ADMM produced non-finite values."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite ADMM iterate at iteration {iteration}")


class SearchSpaceError(MimoImageError):
    """Exhaustive search would enumerate too many candidates."""


class PgmFormatError(MimoImageError, ValueError):
    """Malformed or unsupported PGM file."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class StageError(MimoImageError):
    """Wraps a failure inside the end-to-end pipeline, naming the stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
