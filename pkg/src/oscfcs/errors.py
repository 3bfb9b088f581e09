"""Exception types shared across the package."""


class OscfcsError(Exception):
    """Base class for all package-specific errors."""


class InvalidModelError(OscfcsError, ValueError):
    """Model violates a physical or stability constraint."""


class OutOfDomainError(OscfcsError, ValueError):
    """Bias value lies outside the admissible branch interval."""


class ZeroActivityError(OscfcsError, ZeroDivisionError):
    """Mandel Q is undefined because the mean counting rate vanishes."""


class UnboundedIntervalError(OscfcsError, ValueError):
    """Operation requires a finite branch interval."""


class DomainEscapeError(OscfcsError, RuntimeError):
    """Covariance left the physical region during integration (sigma <= 0
    or divergent), indicating a bias outside the admissible interval."""


class StiffnessError(OscfcsError, RuntimeError):
    """Adaptive integrator failed (step underflow)."""


class WindowTooShortError(OscfcsError, ValueError):
    """Trajectory tail window has too few samples for a slope fit."""


class PeriodicDriveUnsupportedError(OscfcsError, NotImplementedError):
    """The Fock-space generator is time-independent; periodic drive is
    handled by the moment-ODE path instead."""


class NoConvergenceError(OscfcsError, RuntimeError):
    """Eigenvalue iteration did not converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class CutoffExceededError(OscfcsError, RuntimeError):
    """Fock cutoff doubling hit the ceiling without the eigenvalue
    stabilising. Carries the last two estimates for diagnostics."""

    def __init__(self, message, last_estimates=None):
        super().__init__(message)
        self.last_estimates = last_estimates


class CutoffLeakError(OscfcsError, RuntimeError):
    """Wave-function population escaped past the Fock truncation."""


class EmptyInputError(OscfcsError, ValueError):
    """Estimator received an empty outcome set."""


class ConfigError(OscfcsError, ValueError):
    """Malformed run configuration."""
