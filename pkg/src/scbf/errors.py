"""Exception types shared across the package."""


class SCBFError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SCBFError, ValueError):
    """A scalar parameter is outside its admissible range."""


class InvalidInputError(SCBFError, ValueError):
    """Structured inputs are inconsistent with each other."""


class ShapeMismatchError(SCBFError, ValueError):
    """Fields built on different truncations were combined."""


class DivergedError(SCBFError, RuntimeError):
    """A trajectory produced a nonfinite coefficient.

    Nonfinite states abort the run rather than being clamped: clamping
    would silently invalidate every energy-inequality check downstream.
    """

    def __init__(self, step, time, detail=""):
        self.step = step
        self.time = time
        msg = f"trajectory diverged at step {step} (t={time:.6g})"
        if detail:
            msg += ": " + detail
        super().__init__(msg)


class HorizonError(SCBFError, RuntimeError):
    """A pullback horizon was too short for the requested quadrature."""

    def __init__(self, suggested_horizon, msg):
        self.suggested_horizon = suggested_horizon
        super().__init__(msg)


class ConfigError(SCBFError, ValueError):
    """An experiment configuration failed validation."""
