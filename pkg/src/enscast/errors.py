"""Exception types shared across the package."""


class EnscastError(Exception):
    """Base class for all library errors."""


class LengthMismatch(EnscastError):
    """Observation and ensemble lengths disagree."""


class IdMismatch(EnscastError):
    """Observation and ensemble carry different series ids."""


class NonFiniteValue(EnscastError):
    """A NaN or infinity was found in input data.

    Carries the offending 0-based index: ``index`` is an int for
    observation series and a (model, step) pair for ensembles.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SolveFailure(EnscastError):
    """A regularized linear solve failed; input data is likely corrupt."""


class NoConvergence(EnscastError):
    """An iterative solver hit its iteration cap.

    ``residual`` holds the final optimality residual when available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientHistory(EnscastError):
    """Too few past observations for the requested operation."""


class EmptyCone(EnscastError):
    """Clamping emptied a scenario interval."""


class InfeasibleWeightBox(EnscastError):
    """Weight-bound box does not intersect the simplex (internal bug)."""


class BoundViolated(EnscastError):
    """A theoretical performance bound failed; indicates a solver defect.

    ``report`` holds the failing check report.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ParseError(EnscastError):
    """Malformed input file. ``line`` is the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class NonContiguousSteps(EnscastError):
    """Step column is not a contiguous 1..T range. ``step`` is the gap."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UnsupportedAlgorithm(EnscastError):
    """The requested algorithm does not support this operation."""
