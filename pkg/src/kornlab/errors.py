"""Exception types shared across the package."""


class KornLabError(Exception):
    """Base class for all errors raised by kornlab."""


class ConfigurationError(KornLabError):
    """Invalid configuration input (unknown keys, bad surface kind, ...)."""


class GeometryError(KornLabError):
    """Degenerate geometric data (tangent basis, frames, orientation)."""


class ShellIntersectionError(GeometryError):
    """The shell self-intersects: det(Id + t*Pi) <= 0 somewhere."""


class ResolutionError(KornLabError):
    """Grid resolution too coarse for the requested operation."""


class DimensionError(KornLabError):
    """Supplied fields do not match the expected DOF space."""


class PreconditionError(KornLabError):
    """An operation's precondition on its input field is violated."""


class UnsupportedSurfaceError(KornLabError):
    """Operation not available for this surface kind (e.g. sphere PDE)."""


class AmbiguousKernelError(KornLabError):
    """No spectral gap separates the candidate near-kernel.

    Carries the offending leading eigenvalues in ``spectrum``.
    """

    def __init__(self, message, spectrum):
        super().__init__(message)
        self.spectrum = list(spectrum)


class FormError(KornLabError):
    """A quadratic form violates its contract (e.g. B not positive definite)."""


class SolverError(KornLabError):
    """Eigensolver failure or unacceptable residual."""


class SweepError(KornLabError):
    """A per-h task of a sweep failed; completed rows are preserved.

    ``partial_rows`` holds the rows computed before the failure.
    """

    def __init__(self, message, partial_rows):
        super().__init__(message)
        self.partial_rows = list(partial_rows)
