"""Exception types raised across the package."""


class GammaError(Exception):
    """Base class for all package errors."""


class DomainError(GammaError, ValueError):
    """A point lies outside the domain a field is defined on."""


class RangeError(GammaError, ValueError):
    """A radius or slope lies outside a sampled range."""


class ReductionError(GammaError):
    """Cross-section minimization did not reach a local-min certificate.

    The best iterate found is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FrameError(GammaError):
    """A moving or tailored frame could not be constructed."""

    def __init__(self, message, x1=None):
        super().__init__(message)
        self.x1 = x1


class ConditioningError(GammaError):
    """The determinant of the rescaled gradient dropped below the admissible bound."""


class DomainEscapeError(GammaError):
    """The inner perturbation left the enlarged cross-section interval."""


class ConfigError(GammaError, ValueError):
    """Malformed or inconsistent experiment configuration."""


class FrameIndifferenceError(GammaError):
    """The stored density failed the sampled frame-indifference check."""


class WindowError(GammaError, ValueError):
    """Transition windows do not fit inside the segments they belong to."""
