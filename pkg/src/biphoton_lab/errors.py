"""Exception hierarchy shared by all modules."""


class BiphotonLabError(Exception):
    """Base class for all package errors."""


class InvalidModelError(BiphotonLabError, ValueError):
    """A model or spec violates one of its invariants."""


class DomainError(BiphotonLabError, ValueError):
    """An argument lies outside the domain of a formula."""


class OrderingError(BiphotonLabError, ValueError):
    """A tag stream is not sorted in nondecreasing tick order."""


class ConfigError(BiphotonLabError, ValueError):
    """Invalid or inconsistent configuration."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class CalibrationError(BiphotonLabError, RuntimeError):
    """A root-find could not bracket its target."""

    def __init__(self, message, bracket=None):
        self.bracket = bracket
        super().__init__(message)


class ResolutionError(BiphotonLabError, ValueError):
    """Input is too coarsely sampled for the requested computation."""


class FormatError(BiphotonLabError, ValueError):
    """A tag file has a bad magic number, version, or truncated body."""


class SpectralResolutionWarning(UserWarning):
    """Spectral width is close to the FFT grid resolution."""
