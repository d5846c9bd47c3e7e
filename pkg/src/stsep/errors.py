"""Exception types raised across the package."""


class StsepError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StsepError, ValueError):
    """A parameter, lag, grid or option is outside its valid domain."""


class NonDifferentiableError(StsepError, ValueError):
    """A gradient was requested at a kink of the covariance function."""


class DegenerateDerivativeError(StsepError, ArithmeticError):
    """All partial derivatives vanish on the grid, so the derivative ratio is undefined."""


class RegionDegenerateError(StsepError, RuntimeError):
    """Rejection sampling could not place a point inside the sampling region."""


class NotPositiveDefiniteError(StsepError, ArithmeticError):
    """A covariance matrix could not be factorized even after maximal jitter."""


class MethodMismatchError(StsepError, ValueError):
    """The requested simulation method does not apply to the given model."""


class CapExceededError(StsepError, ValueError):
    """The problem size exceeds the configured dense-simulation cap."""


class NoPairsInWindowError(StsepError, ArithmeticError):
    """No observation pair receives positive kernel weight at a lag."""

    def __init__(self, message, h0=None, v0=None, b=None, cell=None):
        super().__init__(message)
        self.h0 = h0
        self.v0 = v0
        self.b = b
        self.cell = cell


class DegenerateDirectionError(StsepError, ArithmeticError):
    """The direction vector is (numerically) orthogonal to the row space of C."""


class ZeroMatrixError(StsepError, ArithmeticError):
    """An operation that needs a nonzero matrix received the zero matrix."""


class PivotDegenerateError(StsepError, ArithmeticError):
    """The pivot entry used to normalise the temporal factor is too small."""


class DegenerateVarianceError(StsepError, ArithmeticError):
    """The alternative-regime variance estimate is zero."""


class InternalConsistencyError(StsepError, RuntimeError):
    """A quantity that must be nonnegative came out clearly negative."""


class ExperimentUnstableError(StsepError, RuntimeError):
    """Too many replications of a Monte-Carlo experiment failed."""

    def __init__(self, message, failures=0, reps=0):
        super().__init__(message)
        self.failures = failures
        self.reps = reps


class CsvFormatError(StsepError, ValueError):
    """A field-sample CSV file could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
