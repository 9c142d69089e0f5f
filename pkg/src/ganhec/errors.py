"""Exception types raised across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """Input lies outside the domain where an operation is defined."""


class DegenerateMeanError(ValueError):
    """Arithmetic mean of rotations has a vanishing singular value."""


class BatchTooSmallError(ValueError):
    pass


class StateError(RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class DegenerateRotationSpreadError(ValueError):
    """``mean(R_A) - I`` is singular or badly conditioned.

    ``fallback_s`` holds the normalization factor to use instead.
    """

    def __init__(self, message: str, fallback_s: float):
        super().__init__(message)
        self.fallback_s = fallback_s


class DivergenceError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateMotionError(ValueError):
    """Rotation axes of the paired motions do not span enough directions."""


class DegenerateDistributionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class PoseParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CalibrationFailure(RuntimeError):
    """Every restart of the adversarial solver failed."""

    def __init__(self, message: str, restarts=None):
        super().__init__(message)
        self.restarts = restarts or []
