"""Physical model of a harmonic oscillator exchanging quanta with N baths.

Everything downstream (closed forms, moment ODEs, Fock-space generator,
jump Monte Carlo) is parametrised by the types defined here: per-bath
exchange rates, an optional drive, and the choice of counting variable
for the reference bath (net exchange vs outgoing flux).

Units: hbar = k_B = 1; rates and frequencies share one user-chosen unit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import InvalidModelError


class CountingMode(enum.Enum):
    """Which jumps of the reference bath are counted.

    NET_EXCHANGE counts emissions minus absorptions; OUTGOING_FLUX counts
    emissions only. The choice selects the bias tilt functions used by
    every method.
    """

    NET_EXCHANGE = "net"
    OUTGOING_FLUX = "flux"


class DriveVariant(enum.Enum):
    NONE = "none"
    CONSTANT = "constant"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class BathChannel:
    """One dissipative channel: emission rate into the bath and absorption
    rate out of it (both >= 0)."""

    gamma_to: float
    gamma_from: float

    def __post_init__(self):
        if self.gamma_to < 0 or self.gamma_from < 0:
            raise InvalidModelError(
                f"bath rates must be non-negative, got "
                f"({self.gamma_to}, {self.gamma_from})"
            )


@dataclass(frozen=True)
class DriveSpec:
    """External force F(t)(a^dag + a) acting on the oscillator.

    variant NONE: F(t) = 0; CONSTANT: F(t) = amplitude; PERIODIC:
    F(t) = amplitude * cos((omega + detuning) t).
    """

    variant: DriveVariant = DriveVariant.NONE
    amplitude: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidModelError("drive amplitude must be >= 0")
        if self.variant is DriveVariant.NONE and self.amplitude != 0.0:
            raise InvalidModelError("variant NONE requires amplitude 0")

    @classmethod
    def none(cls) -> "DriveSpec":
        return cls()

    @classmethod
    def constant(cls, amplitude: float) -> "DriveSpec":
        return cls(DriveVariant.CONSTANT, amplitude)

    @classmethod
    def periodic(cls, amplitude: float, detuning: float) -> "DriveSpec":
        return cls(DriveVariant.PERIODIC, amplitude, detuning)


def thermal_channel(gamma: float, n: float) -> BathChannel:
    """Bath channel for a thermal bath: coupling gamma, mean occupation n.

    Emission rate gamma*(n+1)/2, absorption rate gamma*n/2; the pair always
    satisfies gamma_to >= gamma_from.
    """
    if gamma < 0:
        raise InvalidModelError(f"coupling must be >= 0, got {gamma}")
    if n < 0:
        raise InvalidModelError(f"occupation must be >= 0, got {n}")
    return BathChannel(gamma * (n + 1.0) / 2.0, gamma * n / 2.0)


def occupation_from_temperature(temperature: float, omega: float) -> float:
    """Bose occupation 1/(exp(omega/T) - 1); returns 0 at T = 0."""
    if omega <= 0:
        raise InvalidModelError(f"omega must be > 0, got {omega}")
    if temperature < 0:
        raise InvalidModelError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0.0:
        return 0.0
    return 1.0 / math.expm1(omega / temperature)


@dataclass(frozen=True)
class SystemModel:
    """Oscillator frequency, ordered bath list (baths[0] is the reference
    bath whose quanta are counted) and drive."""

    omega: float
    baths: tuple[BathChannel, ...]
    drive: DriveSpec = field(default_factory=DriveSpec.none)

    def __post_init__(self):
        if self.omega <= 0:
            raise InvalidModelError(f"omega must be > 0, got {self.omega}")
        baths = tuple(self.baths)
        if len(baths) < 1:
            raise InvalidModelError("at least one bath is required")
        object.__setattr__(self, "baths", baths)

    @property
    def reference(self) -> BathChannel:
        return self.baths[0]

    def with_reference(self, index: int) -> "SystemModel":
        """Reorder baths so that baths[index] becomes the reference bath."""
        if not 0 <= index < len(self.baths):
            raise IndexError(f"bath index {index} out of range")
        order = (self.baths[index],) + self.baths[:index] + self.baths[index + 1:]
        return SystemModel(self.omega, order, self.drive)

    def with_merged_tail(self) -> "SystemModel":
        """Merge baths 2..N into a single channel with summed rates.

        The exchange statistics of the reference bath depend on the others
        only through their rate sums, so this is an exact reduction.
        """
        if len(self.baths) <= 2:
            return self
        to = sum(b.gamma_to for b in self.baths[1:])
        frm = sum(b.gamma_from for b in self.baths[1:])
        return SystemModel(self.omega, (self.baths[0], BathChannel(to, frm)), self.drive)


@dataclass(frozen=True)
class DerivedRates:
    """Rate sums delta_plus = sum(G_i + Gbar_i), delta_minus = sum(G_i - Gbar_i)."""

    delta_plus: float
    delta_minus: float


def derived_rates(model: SystemModel) -> DerivedRates:
    """Componentwise rate sums over all baths."""
    plus = sum(b.gamma_to + b.gamma_from for b in model.baths)
    minus = sum(b.gamma_to - b.gamma_from for b in model.baths)
    return DerivedRates(plus, minus)


def tilt_f(mode: CountingMode, reference: BathChannel, s: float) -> tuple[float, float]:
    """Bias tilt pair (f_plus, f_minus) for the reference bath at bias s.

    Net exchange: f_pm = [G1(e^-s - 1) +- Gbar1(e^s - 1)] / 2.
    Outgoing flux: both components equal G1(e^-s - 1) / 2.

    expm1 keeps the s = 0 values exactly zero.
    """
    em = reference.gamma_to * math.expm1(-s)
    if mode is CountingMode.OUTGOING_FLUX:
        g = 0.5 * em
        return g, g
    ab = reference.gamma_from * math.expm1(s)
    return 0.5 * (em + ab), 0.5 * (em - ab)


def tilt_f_derivatives(mode: CountingMode, reference: BathChannel
                       ) -> tuple[float, float, float, float]:
    """First and second s-derivatives of the tilt pair at s = 0.

    Returns (f_plus', f_plus'', f_minus', f_minus''). Used by the analytic
    cumulant formulas.
    """
    g1, g1b = reference.gamma_to, reference.gamma_from
    if mode is CountingMode.OUTGOING_FLUX:
        return -0.5 * g1, 0.5 * g1, -0.5 * g1, 0.5 * g1
    return (0.5 * (g1b - g1), 0.5 * (g1 + g1b),
            -0.5 * (g1 + g1b), 0.5 * (g1 - g1b))


@dataclass(frozen=True)
class ValidationReport:
    """List of violated constraints; empty means the model is usable."""

    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise InvalidModelError("; ".join(self.violations))


def validate(model: SystemModel, mode: CountingMode) -> ValidationReport:
    """Check stability and counting-mode constraints.

    A unique steady state needs delta_minus > 0; net-exchange counting
    additionally needs gamma_to >= gamma_from for the reference bath.
    """
    problems = []
    rates = derived_rates(model)
    if rates.delta_minus <= 0:
        problems.append(
            f"delta_minus = {rates.delta_minus} must be > 0 for a unique steady state"
        )
    ref = model.reference
    if mode is CountingMode.NET_EXCHANGE and ref.gamma_to < ref.gamma_from:
        problems.append(
            "net-exchange counting requires gamma_to >= gamma_from for the reference bath"
        )
    return ValidationReport(tuple(problems))
