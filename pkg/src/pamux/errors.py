"""Exception hierarchy for the pamux package."""


class PamuxError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(PamuxError, ValueError):
    """A supplied parameter violates a documented precondition."""


class DegenerateCouplingError(PamuxError):
    """The closed-form axial solution is singular (beta == gamma).

    The numeric matrix exponential handles this limit; use
    ``transfer_matrix`` instead of ``transfer_matrix_axial``.
    """


class NoZeroCrossingError(PamuxError):
    """The amplified-arm gain never reaches zero for these couplings.

    Critical lengths exist only for 0 < gamma < beta.
    """


class NumericError(PamuxError, RuntimeError):
    """A numeric routine failed to produce a finite, trustworthy result."""


class ModelInconsistencyError(PamuxError):
    """Assembled second moments are not a valid covariance.

    Raised when a per-pixel covariance block has an eigenvalue below
    the negative tolerance; tiny negative eigenvalues from roundoff are
    clipped instead.
    """


class DegenerateModelError(PamuxError):
    """Every singular value of the information matrix fell below the cutoff."""


class EstimabilityError(PamuxError):
    """The requested feature of the object is not estimable from this device."""


class ConvergenceError(PamuxError):
    """An iterative solver hit its iteration cap.

    Carries the best iterate found and its residual so callers can decide
    whether the partial answer is usable.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class FormatError(PamuxError, ValueError):
    """A file being read is malformed or violates its format's value range."""
