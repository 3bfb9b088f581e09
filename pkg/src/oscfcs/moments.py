"""Time integration of the biased Gaussian-parameter ODEs.

The biased characteristic function stays Gaussian, so its evolution
reduces to four scalar equations for the first moments (x, y), the
symmetric covariance sigma and the log-amplitude ln A:

    dx/dt    = -w y + [2 f+ sigma - 2 f- - delta_minus] x
    dy/dt    =  w [x + 4 F(t)] + [2 f+ sigma - 2 f- - delta_minus] y
    dsigma/dt = -2 [delta_minus + 2 f-] sigma + 2 delta_plus
                + 2 f+ (sigma^2 + 1)
    dlnA/dt  = f+ [2 sigma + x^2 + y^2] - 2 f-

The asymptotic slope of ln A(t) is the large-deviation function, which
makes this module an independent verifier of the closed forms and the
only exact route for periodic driving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainEscapeError, StiffnessError, WindowTooShortError
from .model import (
    CountingMode,
    DriveVariant,
    SystemModel,
    derived_rates,
    tilt_f,
    validate,
)

# Covariance ceiling treated as divergence (bias outside the admissible
# interval blows sigma up in finite time).
_SIGMA_CAP = 1e9


@dataclass(frozen=True)
class GaussianTrajectoryState:
    """Snapshot of the biased Gaussian parameters."""

    x: float
    y: float
    sigma: float
    log_amplitude: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.sigma, self.log_amplitude])


@dataclass(frozen=True)
class IntegrationControls:
    """Integrator and slope-fit knobs.

    t_max defaults to 100 / delta_minus (the slowest relaxation rate) and
    sigma0 to the unbiased steady value delta_plus / delta_minus, which
    shortens transients. tail_fraction is the trailing share of the
    trajectory used for the slope fit.
    """

    dt_initial: float | None = None
    tolerance: float = 1e-10
    t_max: float | None = None
    tail_fraction: float = 0.5
    samples: int = 2048
    sigma0: float | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.tail_fraction < 1.0:
            raise ValueError("tail_fraction must lie in (0, 1)")
        if self.samples < 16:
            raise ValueError("need at least 16 samples")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.dt_initial is not None and self.dt_initial <= 0:
            raise ValueError("dt_initial must be positive")


@dataclass(frozen=True)
class TrajectoryRecord:
    """Uniformly sampled trajectory of the Gaussian parameters."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    log_amplitude: np.ndarray
    model: SystemModel
    mode: CountingMode
    s: float

    def state_at(self, index: int) -> GaussianTrajectoryState:
        return GaussianTrajectoryState(
            self.x[index], self.y[index], self.sigma[index], self.log_amplitude[index]
        )


class SlopeFit(NamedTuple):
    theta: float
    stderr: float


def _force(model: SystemModel) -> Callable[[float], float]:
    drive = model.drive
    if drive.variant is DriveVariant.CONSTANT:
        amp = drive.amplitude
        return lambda t: amp
    if drive.variant is DriveVariant.PERIODIC:
        amp = drive.amplitude
        nu = model.omega + drive.detuning
        return lambda t: amp * math.cos(nu * t)
    return lambda t: 0.0


def rhs(state: GaussianTrajectoryState, model: SystemModel, mode: CountingMode,
        s: float, t: float = 0.0) -> GaussianTrajectoryState:
    """Time derivative of the Gaussian parameters at time t."""
    rates = derived_rates(model)
    fp, fm = tilt_f(mode, model.reference, s)
    ft = _force(model)(t)
    mu = 2.0 * fp * state.sigma - 2.0 * fm - rates.delta_minus
    return GaussianTrajectoryState(
        x=-model.omega * state.y + mu * state.x,
        y=model.omega * (state.x + 4.0 * ft) + mu * state.y,
        sigma=(-2.0 * (rates.delta_minus + 2.0 * fm) * state.sigma
               + 2.0 * rates.delta_plus + 2.0 * fp * (state.sigma ** 2 + 1.0)),
        log_amplitude=fp * (2.0 * state.sigma + state.x ** 2 + state.y ** 2) - 2.0 * fm,
    )


def integrate(model: SystemModel, mode: CountingMode, s: float,
              controls: IntegrationControls | None = None) -> TrajectoryRecord:
    """Integrate the Gaussian ODEs from rest (x = y = 0, ln A = 0).

    Uses an adaptive embedded Runge-Kutta pair (DOP853) with dense uniform
    sampling. Raises DomainEscapeError when sigma leaves (0, 1e9), the
    signature of a bias outside the branch interval, and StiffnessError if
    the step size underflows.
    """
    controls = controls or IntegrationControls()
    validate(model, mode).raise_if_invalid()
    rates = derived_rates(model)
    t_max = controls.t_max if controls.t_max is not None else 100.0 / rates.delta_minus
    sigma0 = controls.sigma0 if controls.sigma0 is not None \
        else rates.delta_plus / rates.delta_minus

    fp, fm = tilt_f(mode, model.reference, s)
    dm, dp = rates.delta_minus, rates.delta_plus
    omega = model.omega
    force = _force(model)

    def fun(t, y):
        x, yy, sig, _ = y
        mu = 2.0 * fp * sig - 2.0 * fm - dm
        return (
            -omega * yy + mu * x,
            omega * (x + 4.0 * force(t)) + mu * yy,
            -2.0 * (dm + 2.0 * fm) * sig + 2.0 * dp + 2.0 * fp * (sig * sig + 1.0),
            fp * (2.0 * sig + x * x + yy * yy) - 2.0 * fm,
        )

    def sigma_floor(t, y):
        return y[2]

    def sigma_ceiling(t, y):
        return y[2] - _SIGMA_CAP

    sigma_floor.terminal = True
    sigma_floor.direction = -1
    sigma_ceiling.terminal = True
    sigma_ceiling.direction = 1

    sol = solve_ivp(
        fun, (0.0, t_max), (0.0, 0.0, sigma0, 0.0),
        method="DOP853",
        rtol=controls.tolerance,
        atol=1e-14,
        t_eval=np.linspace(0.0, t_max, controls.samples),
        first_step=controls.dt_initial,
        events=(sigma_floor, sigma_ceiling),
    )
    if sol.status == 1:
        raise DomainEscapeError(
            f"sigma left the physical region at t = {sol.t_events[0][0] if len(sol.t_events[0]) else sol.t_events[1][0]:.6g}; "
            f"s = {s} is outside the admissible bias interval"
        )
    if sol.status != 0:
        raise StiffnessError(f"integrator failed: {sol.message}")
    return TrajectoryRecord(sol.t, sol.y[0], sol.y[1], sol.y[2], sol.y[3],
                            model, mode, s)


def theta_from_slope(trajectory: TrajectoryRecord,
                     controls: IntegrationControls | None = None) -> SlopeFit:
    """Least-squares slope of ln A over the trajectory tail.

    For periodic driving the window is trimmed to an integer number of
    drive periods so the oscillatory residual averages out.
    """
    controls = controls or IntegrationControls()
    t = trajectory.t
    lna = trajectory.log_amplitude
    t_end = t[-1]
    window = controls.tail_fraction * (t_end - t[0])
    mask = t >= t_end - window
    tt, ll = t[mask], lna[mask]

    drive = trajectory.model.drive
    if drive.variant is DriveVariant.PERIODIC:
        nu = trajectory.model.omega + drive.detuning
        if nu != 0.0:
            period = 2.0 * math.pi / abs(nu)
            n_periods = int((tt[-1] - tt[0]) / period)
            if n_periods < 1:
                raise WindowTooShortError(
                    f"tail window {tt[-1] - tt[0]:.3g} shorter than one drive "
                    f"period {period:.3g}"
                )
            keep = tt >= tt[-1] - n_periods * period
            tt, ll = tt[keep], ll[keep]

    if tt.size < 8:
        raise WindowTooShortError(f"only {tt.size} samples in the tail window")

    design = np.column_stack([tt, np.ones_like(tt)])
    coef, _, _, _ = np.linalg.lstsq(design, ll, rcond=None)
    slope, intercept = coef
    resid = ll - design @ coef
    dof = tt.size - 2
    var_t = np.sum((tt - tt.mean()) ** 2)
    stderr = math.sqrt(max(float(resid @ resid), 0.0) / dof / var_t) if dof > 0 else math.nan
    return SlopeFit(float(slope), stderr)


def theta_estimate(model: SystemModel, mode: CountingMode, s: float,
                   controls: IntegrationControls | None = None) -> SlopeFit:
    """Convenience wrapper: integrate then fit the tail slope."""
    traj = integrate(model, mode, s, controls)
    return theta_from_slope(traj, controls)
