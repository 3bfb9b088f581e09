"""Counting statistics of quanta exchanged between a damped, optionally
driven harmonic oscillator and an arbitrary number of Markovian baths.

Four routes to the same large-deviation function, used to cross-validate
each other: closed forms (`analytic`), Gaussian moment ODEs (`moments`),
a truncated-Fock-space eigenproblem (`fock`) and quantum-jump Monte Carlo
(`jumps`).
"""

from .analytic import (
    BranchInterval,
    LdfResult,
    activity,
    branch_points,
    gc_midpoint,
    mandel_q,
    radicand,
    sigma_st,
    theta,
    theta_drive,
    theta_osc,
)
from .errors import (
    ConfigError,
    CutoffExceededError,
    CutoffLeakError,
    DomainEscapeError,
    EmptyInputError,
    InvalidModelError,
    NoConvergenceError,
    OscfcsError,
    OutOfDomainError,
    PeriodicDriveUnsupportedError,
    StiffnessError,
    UnboundedIntervalError,
    WindowTooShortError,
    ZeroActivityError,
)
from .model import (
    BathChannel,
    CountingMode,
    DerivedRates,
    DriveSpec,
    DriveVariant,
    SystemModel,
    ValidationReport,
    derived_rates,
    occupation_from_temperature,
    thermal_channel,
    tilt_f,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "BathChannel",
    "BranchInterval",
    "ConfigError",
    "CountingMode",
    "CutoffExceededError",
    "CutoffLeakError",
    "DerivedRates",
    "DomainEscapeError",
    "DriveSpec",
    "DriveVariant",
    "EmptyInputError",
    "InvalidModelError",
    "LdfResult",
    "NoConvergenceError",
    "OscfcsError",
    "OutOfDomainError",
    "PeriodicDriveUnsupportedError",
    "StiffnessError",
    "SystemModel",
    "UnboundedIntervalError",
    "ValidationReport",
    "WindowTooShortError",
    "ZeroActivityError",
    "activity",
    "branch_points",
    "derived_rates",
    "gc_midpoint",
    "mandel_q",
    "occupation_from_temperature",
    "radicand",
    "sigma_st",
    "theta",
    "theta_drive",
    "theta_osc",
    "thermal_channel",
    "tilt_f",
    "validate",
    "__version__",
]
