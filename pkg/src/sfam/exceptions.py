"""Exception and warning types raised across the package."""


class SfamError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SfamError, ValueError):
    """Input data is malformed (non-finite entries, wrong sign, ...)."""


class ShapeError(SfamError, ValueError):
    """Array dimensions do not match what an operation requires."""


class SkeletonError(SfamError, ValueError):
    """Skeleton definition is invalid or does not match the data."""


class ConfigurationError(SfamError, ValueError):
    """Solver or run configuration is out of range."""


class DegenerateInputError(SfamError, ValueError):
    """Input carries no usable structure (zero matrix, coincident points)."""


class RankViolationError(SfamError, ValueError):
    """A Gram matrix has more significant eigenvalues than allowed."""


class NumericError(SfamError, ArithmeticError):
    """Non-finite values appeared inside an iterative solver."""


class UnsupportedSpecError(SfamError, ValueError):
    """A motion spec cannot be realised (e.g. skeleton is not a tree)."""


class ParseError(SfamError, ValueError):
    """A file could not be parsed; ``line`` holds the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(SfamError, ValueError):
    """A file parsed but its content violates the expected layout."""


class SolverAbort(SfamError, RuntimeError):
    """The alternating solver diverged; ``diagnostics`` holds the history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class PipelineError(SfamError):
    """Failure inside one window of a pipeline run.

    ``window`` is the 0-based window index, ``stage`` the step that failed
    and ``cause`` the original exception.
    """

    def __init__(self, window, stage, cause):
        super().__init__(f"window {window}, stage {stage}: {cause}")
        self.window = window
        self.stage = stage
        self.cause = cause


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateCoefficientWarning(UserWarning):
    """A per-frame shape coefficient vanished; the camera was carried over."""
