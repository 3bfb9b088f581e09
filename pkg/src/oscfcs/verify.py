"""Cross-method verification of the large-deviation function.

Evaluates theta(s) on a bias grid with every requested method (closed
form, moment ODE, Fock-space eigenvalue, jump Monte Carlo) and checks the
deviations against tolerances. Out-of-interval points are recorded as
expected failures of both routes rather than errors: the closed form
reports out-of-domain and the Fock ladder reports a cutoff blow-up.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytic, fock, jumps, moments
from .errors import CutoffExceededError, NoConvergenceError, OutOfDomainError
from .model import CountingMode, SystemModel, validate


@dataclass(frozen=True)
class VerifyTolerances:
    ode_rtol: float = 1e-6
    fock_atol: float = 1e-7
    mc_nsigma: float = 3.0


@dataclass(frozen=True)
class PointReport:
    """One bias value: per-method estimates, deviations and verdicts."""

    s: float
    in_domain: bool
    theta_closed: float | None = None
    theta_ode: float | None = None
    dev_ode: float | None = None
    ok_ode: bool | None = None
    theta_fock: float | None = None
    fock_cutoff: int | None = None
    dev_fock: float | None = None
    ok_fock: bool | None = None
    theta_mc: float | None = None
    mc_stderr: float | None = None
    ok_mc: bool | None = None
    status: str = "ok"


@dataclass(frozen=True)
class VerificationReport:
    points: tuple[PointReport, ...]
    passed: bool
    notes: tuple[str, ...] = field(default_factory=tuple)


def _relative_dev(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def run_verification(model: SystemModel, mode: CountingMode, s_values,
                     methods=("closed", "ode", "fock"),
                     tolerances: VerifyTolerances | None = None,
                     ode_controls: moments.IntegrationControls | None = None,
                     fock_tol: float = 1e-8, cutoff_start: int = 8,
                     cutoff_max: int = 128,
                     mc_options: dict | None = None, seed: int = 0,
                     threads: int = 1) -> VerificationReport:
    """Evaluate theta by each method on the grid and compare.

    Returns a report whose `passed` flag is true only if every in-domain
    point meets its tolerance. Monte Carlo, when requested, runs one
    ensemble and is compared through the empirical SCGF at each s (within
    mc_nsigma jackknife errors, skipping tail-flagged entries).
    """
    tolerances = tolerances or VerifyTolerances()
    validate(model, mode).raise_if_invalid()
    interval = analytic.branch_points(model, mode)
    s_values = [float(s) for s in s_values]
    notes: list[str] = [
        f"branch interval [{interval.s_minus:.12g}, {interval.s_plus:.12g}]",
    ]

    mc_est = None
    if "mc" in methods:
        opts = dict(mc_options or {})
        t_final = opts.pop("t_final", 200.0)
        n_traj = opts.pop("n_traj", 2000)
        cutoff = opts.pop("cutoff", 30)
        outcomes = jumps.simulate(model, t_final, n_traj, cutoff=cutoff,
                                  seed=seed, threads=threads, **opts)
        mc_est = jumps.estimate(outcomes, mode, s_values)
        notes.append(f"mc: {n_traj} trajectories to t = {t_final}")

    def eval_point(item):
        idx, s = item
        if not interval.contains(s):
            status = "out of interval: closed form out-of-domain"
            if "fock" in methods:
                try:
                    fock.converge_cutoff(model, mode, s, tol=fock_tol,
                                         cutoff_start=cutoff_start,
                                         cutoff_max=min(cutoff_max, 32))
                    status += "; fock unexpectedly stabilised"
                except (CutoffExceededError, NoConvergenceError):
                    status += "; fock cutoff blow-up (expected)"
            return PointReport(s=s, in_domain=False, status=status)

        closed = analytic.theta(model, mode, s).theta
        report = {"s": s, "in_domain": True, "theta_closed": closed}
        if "ode" in methods:
            est = moments.theta_estimate(model, mode, s, ode_controls)
            dev = _relative_dev(est.theta, closed)
            report.update(theta_ode=est.theta, dev_ode=dev,
                          ok_ode=dev <= tolerances.ode_rtol)
        if "fock" in methods:
            res = fock.converge_cutoff(model, mode, s, tol=fock_tol,
                                       cutoff_start=cutoff_start,
                                       cutoff_max=cutoff_max)
            dev = abs(res.theta - closed)
            report.update(theta_fock=res.theta, fock_cutoff=res.cutoff_used,
                          dev_fock=dev, ok_fock=dev <= tolerances.fock_atol)
        if mc_est is not None:
            lam = float(mc_est.scgf[idx])
            err = float(mc_est.scgf_stderr[idx])
            if bool(mc_est.flagged[idx]):
                report.update(theta_mc=lam, mc_stderr=err, ok_mc=None,
                              status="mc tail-dominated; comparison skipped")
            else:
                ok = abs(lam - closed) <= tolerances.mc_nsigma * max(err, 1e-300)
                report.update(theta_mc=lam, mc_stderr=err, ok_mc=ok)
        return PointReport(**report)

    items = list(enumerate(s_values))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(eval_point, items))
    else:
        points = [eval_point(it) for it in items]

    passed = all(
        flag is not False
        for p in points
        for flag in (p.ok_ode, p.ok_fock, p.ok_mc)
    )
    return VerificationReport(tuple(points), passed, tuple(notes))
