"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the physically meaningful domain of a constitutive law."""


class DegenerateSaturation(DomainError):
    """Saturation at or below the residual value, where capillary pressure is undefined."""


class BelowMinimalPressure(DomainError):
    """Generalized pressure at or below the critical value u_min (physical pressure -> -inf)."""


class GeometryError(ValueError):
    """Inconsistent mesh geometry or boundary specification."""


class DimensionError(ValueError):
    """Field length does not match the mesh level it is paired with."""


class NotCoercive(ValueError):
    """Spatial problem admits no minimizer (e.g. nonpositive diagonal curvature)."""


class NonConvergence(RuntimeError):
    """Iteration budget exhausted before reaching the requested residual.

    Carries the partial solve report (and last iterate) for post-mortem use.
    """

    def __init__(self, message, report=None, iterate=None):
        super().__init__(message)
        self.report = report
        self.iterate = iterate


class ParseError(ValueError):
    """Configuration file is not valid JSON."""


class ValidationError(ValueError):
    """Configuration violates the schema; names the offending field."""

    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)
