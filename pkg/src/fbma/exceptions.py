"""Error types raised across the package."""


class FbmaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FbmaError, ValueError):
    """Malformed geometric or functional data."""


class DomainError(FbmaError, ValueError):
    """An operation was asked outside its mathematical domain."""


class EmptyFreeBoundaryError(FbmaError, ValueError):
    """The set {u < 0} is empty."""


class DegenerateDensityError(FbmaError, ValueError):
    """A weight has (numerically) zero total mass."""


class InvalidPairError(FbmaError, ValueError):
    """A structural pair violates monotonicity or normalization."""


class NormalizationFailure(FbmaError, RuntimeError):
    """The translation maximizer was pushed to the boundary of the free set."""


class ReplacementInvalid(FbmaError, RuntimeError):
    """A replacement function failed its numerical verification."""


class TargetUnreachable(FbmaError, RuntimeError):
    """Bisection could not bracket the requested target."""


class HypothesisViolation(FbmaError, ValueError):
    """Inputs violate a hypothesis required by a driver."""


class IdentityUndefined(FbmaError, ValueError):
    """An identity check is undefined for the given parameters."""


class BarycenterError(FbmaError, ValueError):
    """A weighted barycenter is nonzero where solvability needs it to vanish."""


class DoublingMassGap(FbmaError, ValueError):
    """A doubling ratio had a zero denominator."""

    def __init__(self, message, center=None, axes=None):
        super().__init__(message)
        self.center = center
        self.axes = axes
