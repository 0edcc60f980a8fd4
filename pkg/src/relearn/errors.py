"""Exception types raised across the package."""


class RelearnError(Exception):
    """Base class for all package errors."""


class DimensionError(RelearnError, ValueError):
    pass


class SingularMatrixError(RelearnError, ValueError):
    pass


class SpectraOverlapError(SingularMatrixError):
    """The Sylvester operator is singular (the two spectra intersect)."""


class StabilityError(RelearnError):
    """A gain does not stabilize the pair it is evaluated against.

    The offending spectral radius is kept on ``rho`` so diverging runs can
    be diagnosed from the traceback alone.
    """

    def __init__(self, message: str, rho: float | None = None):
        if rho is not None:
            message = f"{message} (spectral radius {rho:.6g})"
        super().__init__(message)
        self.rho = rho


class NotSchurError(StabilityError, ValueError):
    pass


class NonStabilizableError(RelearnError):
    pass


class ConstructionError(RelearnError):
    pass


class DivergenceError(RelearnError):
    """Raised when the simulated state blows up; carries the partial record."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


class ConfigError(RelearnError, ValueError):
    pass
