"""Exception hierarchy shared across the package."""


class WotError(Exception):
    """Base class for all library errors."""


class InvalidMeasureError(WotError, ValueError):
    pass


class LpError(WotError):
    pass


class DimensionError(LpError, ValueError):
    pass


class SingularBasisError(LpError):
    """Raised when a basis refactorization is numerically singular."""


class ConvexOrderError(WotError):
    """Two measures are not in convex order (or the checks disagree)."""

    def __init__(self, message, reason=None):
        super().__init__(message)
        self.reason = reason


class ConvexOrderInconsistency(ConvexOrderError):
    """The call-function test and the LP feasibility test disagree."""


class GridResolutionError(WotError):
    pass


class ArbitrageError(WotError):
    """Quoted prices violate static no-arbitrage (monotonicity/convexity in strike)."""

    def __init__(self, message, strikes=None):
        super().__init__(message)
        self.strikes = strikes


class CertificateError(WotError):
    """A hedge certificate failed grid verification."""

    def __init__(self, message, violation=None, point=None):
        super().__init__(message)
        self.violation = violation
        self.point = point
