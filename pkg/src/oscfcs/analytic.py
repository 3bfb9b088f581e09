"""Closed-form large-deviation function of the counting process.

The scaled cumulant generating function theta(s) of the counted quanta
splits into an undriven-oscillator part and a drive part,

    theta(s) = theta_osc(s) + theta_drive(s),
    theta_osc(s) = delta_minus - sqrt(R(s)),

where the radicand R(s) = [delta_minus + 2 f_minus]^2
- 4 f_plus [delta_plus + f_plus] must stay non-negative: the biased
steady state exists only for s inside a branch interval [s_minus, s_plus].
This module evaluates theta and its bias derivatives at s = 0 (activity,
Mandel Q) in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    OutOfDomainError,
    UnboundedIntervalError,
    ZeroActivityError,
)
from .model import (
    CountingMode,
    DriveVariant,
    SystemModel,
    derived_rates,
    tilt_f,
    tilt_f_derivatives,
    validate,
)

# Relative threshold below which f_plus is treated as zero and the
# conjugate form of sigma_st is used (removable 0/0 at s = 0).
_FPLUS_EPS = 1e-12


@dataclass(frozen=True)
class BranchInterval:
    """Admissible bias interval and the quadratic coefficients behind it.

    e^s values at the endpoints solve A u^2 - 2 B u - C = 0, obtained from
    u * R(ln u) = -(A/2) u^2 + B u + C/2. Infinite endpoints mean the
    radicand never crosses zero on that side.
    """

    s_minus: float
    s_plus: float
    coeff_a: float
    coeff_b: float
    coeff_c: float

    @property
    def is_bounded(self) -> bool:
        return math.isfinite(self.s_minus) and math.isfinite(self.s_plus)

    @property
    def width(self) -> float:
        return self.s_plus - self.s_minus

    def contains(self, s: float) -> bool:
        return self.s_minus <= s <= self.s_plus

    def interior(self, margin: float = 0.0) -> tuple[float, float]:
        """Endpoints pulled inward by `margin` times the (finite) width."""
        lo, hi = self.s_minus, self.s_plus
        if margin:
            if not self.is_bounded:
                raise UnboundedIntervalError("margin requires a bounded interval")
            lo += margin * self.width
            hi -= margin * self.width
        return lo, hi


@dataclass(frozen=True)
class LdfResult:
    """theta value with its additive split and domain flag."""

    theta: float
    theta_osc: float
    theta_drive: float
    in_domain: bool


def radicand(model: SystemModel, mode: CountingMode, s: float) -> float:
    """Expression under the square root of theta_osc; R(0) = delta_minus^2.

    May be negative (bias outside the branch interval); the caller decides
    what to do with that.
    """
    rates = derived_rates(model)
    fp, fm = tilt_f(mode, model.reference, s)
    return (rates.delta_minus + 2.0 * fm) ** 2 - 4.0 * fp * (rates.delta_plus + fp)


def _quadratic_coeffs(model: SystemModel, mode: CountingMode
                      ) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of u * R(ln u) = a u^2 + b u + c, u = e^s.

    For flux counting R is linear in 1/u, so a = 0 there.
    """
    rates = derived_rates(model)
    dp, dm = rates.delta_plus, rates.delta_minus
    g1, g1b = model.reference.gamma_to, model.reference.gamma_from
    if mode is CountingMode.OUTGOING_FLUX:
        return 0.0, dm * dm + 2.0 * g1 * (dp - dm), -2.0 * g1 * (dp - dm)
    a = -2.0 * g1b * (dp + dm - 2.0 * g1)
    b = dm * dm + 2.0 * g1 * (dp - dm - 4.0 * g1b) + 2.0 * g1b * (dp + dm)
    c = 2.0 * g1 * (dm - dp + 2.0 * g1b)
    return a, b, c


def _bracketed_root(f, lo: float, hi: float, grow_hi: bool) -> float:
    """Root of f on [lo, hi]; if grow_hi, double hi until f changes sign.

    Used for the degenerate branch-point cases where the quadratic
    coefficient vanishes. Plain bisection; the functions involved are
    monotone on the bracket.
    """
    flo = f(lo)
    fhi = f(hi)
    if grow_hi:
        for _ in range(200):
            if flo * fhi <= 0:
                break
            hi *= 2.0
            fhi = f(hi)
        else:
            raise ArithmeticError("no sign change found while expanding bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0 or (hi - lo) <= 1e-15 * max(1.0, abs(mid)):
            return mid
        if flo * fmid <= 0:
            hi, fhi = mid, fmid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def branch_points(model: SystemModel, mode: CountingMode) -> BranchInterval:
    """Boundary of {s : R(s) >= 0} around s = 0.

    Generic net-exchange models reduce to a quadratic in u = e^s solved in
    closed form; when the quadratic coefficient vanishes (flux counting,
    zero-temperature reference bath, or no emission in the other baths)
    the remaining root is found by bracketed bisection on R.
    """
    validate(model, mode).raise_if_invalid()
    a, b, c = _quadratic_coeffs(model, mode)
    rates = derived_rates(model)
    scale = rates.delta_plus ** 2

    if abs(a) > _FPLUS_EPS * scale:
        # Downward parabola with R(u=1) = delta_minus^2 > 0: two real
        # roots straddling u = 1. Stable quadratic formula.
        disc = math.sqrt(b * b - 4.0 * a * c)
        q = -0.5 * (b + math.copysign(disc, b))
        u1, u2 = q / a, c / q
        u_lo, u_hi = min(u1, u2), max(u1, u2)
        s_minus = math.log(u_lo) if u_lo > 0 else -math.inf
        return BranchInterval(s_minus, math.log(u_hi), -2.0 * a, b, 2.0 * c)

    # a == 0: R(u) = b + c/u with b > 0, so no root for u > 1 (s_plus
    # infinite); a finite s_minus exists iff c < 0. Root located by
    # bisection on w = e^-s per the degenerate-case recipe.
    s_plus = math.inf
    if c < -_FPLUS_EPS * scale:

        def r_of_w(w: float) -> float:
            return radicand(model, mode, -math.log(w))

        w_root = _bracketed_root(r_of_w, 1.0, 2.0, grow_hi=True)
        s_minus = -math.log(w_root)
    else:
        s_minus = -math.inf
    return BranchInterval(s_minus, s_plus, -2.0 * a, b, 2.0 * c)


def theta_osc(model: SystemModel, mode: CountingMode, s: float) -> float:
    """Undriven part delta_minus - sqrt(R(s)); zero at s = 0."""
    r = radicand(model, mode, s)
    if r < 0:
        raise OutOfDomainError(
            f"s = {s} lies outside the branch interval (radicand {r} < 0)"
        )
    return derived_rates(model).delta_minus - math.sqrt(r)


def sigma_st(model: SystemModel, mode: CountingMode, s: float) -> float:
    """Stationary covariance of the biased Gaussian state.

    [delta_minus + 2 f_minus - Sigma] / (2 f_plus) with Sigma = sqrt(R);
    evaluated through the conjugate form 2 (delta_plus + f_plus) /
    (delta_minus + 2 f_minus + Sigma) when f_plus is numerically zero
    (includes s = 0, where the value is delta_plus / delta_minus).
    """
    r = radicand(model, mode, s)
    if r < 0:
        raise OutOfDomainError(
            f"s = {s} lies outside the branch interval (radicand {r} < 0)"
        )
    rates = derived_rates(model)
    fp, fm = tilt_f(mode, model.reference, s)
    sigma_root = math.sqrt(r)
    if abs(fp) < _FPLUS_EPS * rates.delta_plus:
        return 2.0 * (rates.delta_plus + fp) / (rates.delta_minus + 2.0 * fm + sigma_root)
    return (rates.delta_minus + 2.0 * fm - sigma_root) / (2.0 * fp)


def theta_drive(model: SystemModel, mode: CountingMode, s: float) -> float:
    """Drive contribution to theta(s); zero without a drive.

    Constant drive:  16 F^2 w^2 f_plus / (Sigma^2 + w^2).
    Periodic drive (detuning d != -w):
        8 F^2 w^2 f_plus / (Sigma^2 + d^2)
            * [1 - 2 w (w + d) / (Sigma^2 + (2w + d)^2)].
    At d = -w the force is constant in time and the constant-drive formula
    applies (the periodic formula is discontinuous there).
    """
    drive = model.drive
    if drive.variant is DriveVariant.NONE or drive.amplitude == 0.0:
        # Still validate the domain so callers get consistent errors.
        if radicand(model, mode, s) < 0:
            raise OutOfDomainError(f"s = {s} lies outside the branch interval")
        return 0.0
    r = radicand(model, mode, s)
    if r < 0:
        raise OutOfDomainError(f"s = {s} lies outside the branch interval")
    fp, _ = tilt_f(mode, model.reference, s)
    w = model.omega
    f2w2 = drive.amplitude ** 2 * w * w
    if drive.variant is DriveVariant.CONSTANT or drive.detuning == -w:
        return 16.0 * f2w2 * fp / (r + w * w)
    d = drive.detuning
    return (8.0 * f2w2 * fp / (r + d * d)
            * (1.0 - 2.0 * w * (w + d) / (r + (2.0 * w + d) ** 2)))


def theta(model: SystemModel, mode: CountingMode, s: float) -> LdfResult:
    """Full large-deviation function with its additive split."""
    osc = theta_osc(model, mode, s)
    drv = theta_drive(model, mode, s)
    return LdfResult(osc + drv, osc, drv, True)


def _drive_prefactor_derivs(model: SystemModel, r0: float, r1: float
                            ) -> tuple[float, float]:
    """(G(0), G'(0)) of theta_drive = G(s) * f_plus(s), given R(0), R'(0).

    G depends on s only through R, so G'(0) = dG/dR * R'(0).
    """
    drive = model.drive
    w = model.omega
    f2w2 = drive.amplitude ** 2 * w * w
    if drive.variant is DriveVariant.CONSTANT or drive.detuning == -w:
        den = r0 + w * w
        return 16.0 * f2w2 / den, -16.0 * f2w2 * r1 / den ** 2
    d = drive.detuning
    d1 = r0 + d * d
    d2 = r0 + (2.0 * w + d) ** 2
    wterm = 2.0 * w * (w + d)
    g0 = 8.0 * f2w2 * (1.0 - wterm / d2) / d1
    dg_dr = 8.0 * f2w2 * (wterm / (d2 * d2 * d1) - (1.0 - wterm / d2) / (d1 * d1))
    return g0, dg_dr * r1


def theta_derivatives_at_zero(model: SystemModel, mode: CountingMode
                              ) -> tuple[float, float]:
    """Analytic (theta'(0), theta''(0)) including the drive part."""
    validate(model, mode).raise_if_invalid()
    rates = derived_rates(model)
    dp, dm = rates.delta_plus, rates.delta_minus
    p1, p2, m1, m2 = tilt_f_derivatives(mode, model.reference)

    r0 = dm * dm
    r1 = 4.0 * (m1 * dm - p1 * dp)
    r2 = 4.0 * m2 * dm + 8.0 * m1 * m1 - 4.0 * p2 * dp - 8.0 * p1 * p1

    t1 = -r1 / (2.0 * dm)
    t2 = -r2 / (2.0 * dm) + r1 * r1 / (4.0 * dm ** 3)

    drive = model.drive
    if drive.variant is not DriveVariant.NONE and drive.amplitude != 0.0:
        g0, g1 = _drive_prefactor_derivs(model, r0, r1)
        t1 += g0 * p1
        t2 += 2.0 * g1 * p1 + g0 * p2
    return t1, t2


def _fd_derivatives(model: SystemModel, mode: CountingMode, h: float = 1e-5
                    ) -> tuple[float, float]:
    """Central finite differences of theta at 0 with one Richardson step."""

    def th(s: float) -> float:
        return theta(model, mode, s).theta

    def first(step: float) -> float:
        return (th(step) - th(-step)) / (2.0 * step)

    def second(step: float) -> float:
        return (th(step) - 2.0 * th(0.0) + th(-step)) / step ** 2

    d1 = (4.0 * first(h / 2.0) - first(h)) / 3.0
    d2 = (4.0 * second(h / 2.0) - second(h)) / 3.0
    return d1, d2


def activity(model: SystemModel, mode: CountingMode, check: bool = True) -> float:
    """Mean counting rate -theta'(0) from the analytic derivative.

    With check=True a finite-difference evaluation of theta'(0) guards the
    closed form (they must agree to 1e-6 relative).
    """
    t1, _ = theta_derivatives_at_zero(model, mode)
    k0 = -t1
    if check:
        fd1, _ = _fd_derivatives(model, mode)
        scale = max(abs(k0), derived_rates(model).delta_plus)
        if abs(-fd1 - k0) > 1e-6 * scale:
            raise ArithmeticError(
                f"analytic activity {k0} disagrees with finite difference {-fd1}"
            )
    return k0


def mandel_q(model: SystemModel, mode: CountingMode) -> float:
    """Mandel Q of the counting process, -theta''(0)/theta'(0) - 1.

    Undefined (ZeroActivityError) when the mean rate vanishes, e.g. for
    net counting between equal-temperature baths.
    """
    t1, t2 = theta_derivatives_at_zero(model, mode)
    if t1 == 0.0:
        raise ZeroActivityError("mean rate is zero; Mandel Q undefined")
    return -t2 / t1 - 1.0


def gc_midpoint(interval: BranchInterval) -> float:
    """Symmetry point (s_minus + s_plus) / 2 of a bounded branch interval."""
    if not interval.is_bounded:
        raise UnboundedIntervalError(
            "symmetry midpoint needs both branch points finite"
        )
    return 0.5 * (interval.s_minus + interval.s_plus)
