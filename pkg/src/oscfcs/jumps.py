"""Quantum-jump Monte Carlo unraveling with per-channel jump counters.

Each bath contributes an emission channel sqrt(2 Gamma) a and an
absorption channel sqrt(2 Gbar) a^dag. Between jumps the wave function
evolves under the non-Hermitian drift; a jump fires when the squared norm
decays below a uniformly drawn threshold (the standard unbiased jump
clock), the channel is drawn proportionally to the instantaneous channel
rates, and the reference-bath counters are updated.

Trajectories are propagated in batches (one matrix-matrix product per
time step) while every trajectory consumes randomness only from its own
counter-based stream keyed by (seed, trajectory index), so results are
bit-identical regardless of batching or thread count. Jump times are
resolved by dyadic bisection with cached propagators, keeping the clock
unbiased to a 2^-14 fraction of a step.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import CutoffLeakError, EmptyInputError, InvalidModelError
from .model import CountingMode, DriveVariant, SystemModel, derived_rates

_BISECTION_LEVELS = 14
_CHUNK_COLUMNS = 1024


@dataclass(frozen=True)
class TrajectoryOutcome:
    """Counters of one trajectory; jump log kept only on request."""

    k_net: int
    k_flux: int
    t_final: float
    n_jumps: int
    jumps: tuple[tuple[float, int, str], ...] | None = None


@dataclass(frozen=True)
class McEstimate:
    """Ensemble statistics of the counted quanta.

    scgf holds ln(mean e^{-s K}) / t on the requested bias grid with
    jackknife standard errors; entries are flagged when the effective
    sample size drops below 10% of the ensemble (the empirical average is
    then dominated by rare samples and unreliable).
    """

    mode: CountingMode
    t_final: float
    n_traj: int
    mean_rate: float
    mean_rate_stderr: float
    mandel_q: float | None
    mandel_q_stderr: float | None
    zero_activity: bool
    s: np.ndarray
    scgf: np.ndarray
    scgf_stderr: np.ndarray
    ess_fraction: np.ndarray
    flagged: np.ndarray


@dataclass(frozen=True)
class _Channel:
    bath: int
    kind: str
    rate: float
    op: np.ndarray


class _CachedPropagators:
    """exp(-i H_eff dt / 2^k) for k = 0..levels; time independent."""

    def __init__(self, h_eff: np.ndarray, dt: float, levels: int):
        self.dt = dt
        self.levels = levels
        self._u = [la.expm(-1j * h_eff * (dt / 2 ** k)) for k in range(levels + 1)]

    def advance(self, states: np.ndarray, t0: float, level: int) -> np.ndarray:
        return self._u[level] @ states


class _RK4Propagators:
    """Classical RK4 steps for a time-dependent effective Hamiltonian."""

    def __init__(self, h0: np.ndarray, drive_op: np.ndarray, amplitude, dt: float,
                 levels: int):
        self.h0 = h0
        self.drive_op = drive_op
        self.amplitude = amplitude
        self.dt = dt
        self.levels = levels

    def _deriv(self, states: np.ndarray, t: float) -> np.ndarray:
        h = self.h0 + self.amplitude(t) * self.drive_op
        return -1j * (h @ states)

    def advance(self, states: np.ndarray, t0: float, level: int) -> np.ndarray:
        h = self.dt / 2 ** level
        k1 = self._deriv(states, t0)
        k2 = self._deriv(states + 0.5 * h * k1, t0 + 0.5 * h)
        k3 = self._deriv(states + 0.5 * h * k2, t0 + 0.5 * h)
        k4 = self._deriv(states + h * k3, t0 + h)
        return states + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _norm2(states: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", states.conj(), states).real


def _traj_rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _initial_vector(initial_state, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Per-trajectory initial wave function; a thermal start consumes one
    geometric variate from the trajectory's stream before anything else."""
    psi = np.zeros(dim, dtype=np.complex128)
    if initial_state == "vacuum":
        psi[0] = 1.0
        return psi
    kind = initial_state[0]
    if kind == "fock":
        n = int(initial_state[1])
        if not 0 <= n < dim:
            raise ValueError(f"fock level {n} outside truncated space")
        psi[n] = 1.0
        return psi
    if kind == "thermal":
        nbar = float(initial_state[1])
        if nbar == 0.0:
            psi[0] = 1.0
            return psi
        n = int(rng.geometric(1.0 / (nbar + 1.0))) - 1
        if n >= dim:
            raise CutoffLeakError(f"thermal draw n = {n} exceeds the cutoff {dim - 1}")
        psi[n] = 1.0
        return psi
    if kind == "coherent":
        alpha = complex(initial_state[1])
        amps = np.zeros(dim, dtype=np.complex128)
        amps[0] = 1.0
        for n in range(1, dim):
            amps[n] = amps[n - 1] * alpha / math.sqrt(n)
        amps *= math.exp(-0.5 * abs(alpha) ** 2)
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > 1e-6:
            raise CutoffLeakError(
                f"coherent state |alpha| = {abs(alpha):.3g} barely fits the cutoff"
            )
        return amps / math.sqrt(norm2)
    raise ValueError(f"unknown initial state {initial_state!r}")


class _ChunkRunner:
    """Propagates one contiguous block of trajectories."""

    def __init__(self, channels: list[_Channel], prop, t_final: float,
                 seed: int, indices: np.ndarray, initial_state,
                 record_jumps: bool, leak_tol: float):
        self.channels = channels
        self.prop = prop
        self.t_final = t_final
        self.leak_tol = leak_tol
        self.rngs = [_traj_rng(seed, int(i)) for i in indices]
        self.indices = indices
        m = len(indices)
        self.k_net = np.zeros(m, dtype=np.int64)
        self.k_flux = np.zeros(m, dtype=np.int64)
        self.n_jumps = np.zeros(m, dtype=np.int64)
        self.logs: list[list] | None = [[] for _ in range(m)] if record_jumps else None
        dim = channels[0].op.shape[0]
        cols = [_initial_vector(initial_state, dim, rng) for rng in self.rngs]
        self.states = np.stack(cols, axis=1)
        self.thresholds = np.array([rng.uniform() for rng in self.rngs])

    def _check_leak(self, states: np.ndarray, norms2: np.ndarray, t: float) -> None:
        top = np.abs(states[-1, :]) ** 2
        frac = float(np.max(top / np.maximum(norms2, 1e-300)))
        if frac > self.leak_tol:
            raise CutoffLeakError(
                f"top-level population fraction {frac:.2e} exceeded "
                f"{self.leak_tol:.1e} at t = {t:.6g}; increase the cutoff"
            )

    def _apply_jumps(self, states: np.ndarray, local: np.ndarray,
                     times: np.ndarray) -> np.ndarray:
        """Draw and apply one jump per column; updates counters and draws
        fresh thresholds. Per trajectory the draw order is fixed (channel
        uniform, then new threshold), keeping streams batch independent."""
        n_ch = len(self.channels)
        m = states.shape[1]
        weights = np.empty((n_ch, m))
        transformed = []
        for c, ch in enumerate(self.channels):
            tr = ch.op @ states
            transformed.append(tr)
            weights[c] = ch.rate * _norm2(tr)
        total = weights.sum(axis=0)
        if np.any(total <= 0.0):
            raise CutoffLeakError("norm decayed with no active jump channel")
        draws = np.empty(m)
        new_thresholds = np.empty(m)
        for pos, j in enumerate(local):
            rng = self.rngs[j]
            draws[pos] = rng.uniform()
            new_thresholds[pos] = rng.uniform()
        draws *= total
        cum = np.cumsum(weights, axis=0)
        choice = np.minimum((cum < draws[None, :]).sum(axis=0), n_ch - 1)

        out = np.empty_like(states)
        for c, ch in enumerate(self.channels):
            mask = choice == c
            if not np.any(mask):
                continue
            out[:, mask] = transformed[c][:, mask]
            hit = local[mask]
            self.n_jumps[hit] += 1
            if ch.bath == 0:
                if ch.kind == "emit":
                    self.k_net[hit] += 1
                    self.k_flux[hit] += 1
                else:
                    self.k_net[hit] -= 1
            if self.logs is not None:
                for j, when in zip(hit, times[mask]):
                    self.logs[j].append((float(when), ch.bath, ch.kind))
        out /= np.sqrt(_norm2(out))[None, :]
        self.thresholds[local] = new_thresholds
        return out

    def _walk(self, psi: np.ndarray, j: int, t0: float, pos: int) -> np.ndarray:
        """Scalar traversal of one column from `pos` (finest units) to the
        segment end, handling every crossing on the way."""
        levels = self.prop.levels
        finest = self.prop.dt / 2 ** levels
        total = 2 ** levels
        state = psi
        while pos < total:
            # largest power-of-two piece fitting the remainder
            span = 1 << ((total - pos).bit_length() - 1)
            k = levels - (span.bit_length() - 1)
            trial = self.prop.advance(state[:, None], t0 + pos * finest, k)[:, 0]
            if float(np.vdot(trial, trial).real) >= self.thresholds[j]:
                state = trial
                pos += span
                continue
            # crossing inside [pos, pos + span): bisect down to one slice
            while span > 1:
                k += 1
                span >>= 1
                trial = self.prop.advance(state[:, None], t0 + pos * finest, k)[:, 0]
                if float(np.vdot(trial, trial).real) >= self.thresholds[j]:
                    state = trial
                    pos += span
            trial = self.prop.advance(state[:, None], t0 + pos * finest, levels)[:, 0]
            pos += 1
            state = self._apply_jumps(trial[:, None], np.array([j]),
                                      np.array([t0 + pos * finest]))[:, 0]
        return state

    def _resolve_crossings(self, start_states: np.ndarray, local: np.ndarray,
                           t0: float) -> np.ndarray:
        """Handle all columns whose norm crossed within one segment.

        The first jump of every column is located by batched dyadic
        bisection (all columns advance level by level together); survivors
        are then realigned to the segment end in batch. The rare second
        crossing during realignment falls back to the scalar walker,
        resuming from the saved post-jump state so nothing is recounted.
        """
        levels = self.prop.levels
        finest = self.prop.dt / 2 ** levels
        states = start_states.copy()
        pos = np.zeros(len(local), dtype=np.int64)
        for k in range(1, levels + 1):
            span = 1 << (levels - k)
            trial = self._advance_mixed(states, t0, pos, finest, k)
            ok = _norm2(trial) >= self.thresholds[local]
            states[:, ok] = trial[:, ok]
            pos[ok] += span
        states = self._advance_mixed(states, t0, pos, finest, levels)
        pos += 1
        states = self._apply_jumps(states, local, t0 + pos * finest)

        post_jump = states.copy()
        pos_after = pos.copy()

        remaining = (1 << levels) - pos
        for k in range(1, levels + 1):
            span = 1 << (levels - k)
            mask = (remaining & span) != 0
            if not np.any(mask):
                continue
            sub_pos = (1 << levels) - remaining[mask]
            states[:, mask] = self._advance_mixed(states[:, mask], t0,
                                                  sub_pos, finest, k)
            remaining[mask] -= span

        again = _norm2(states) < self.thresholds[local]
        if np.any(again):
            for idx in np.nonzero(again)[0]:
                states[:, idx] = self._walk(post_jump[:, idx], int(local[idx]),
                                            t0, int(pos_after[idx]))
        return states

    def _advance_mixed(self, states: np.ndarray, t0: float, pos: np.ndarray,
                       finest: float, k: int) -> np.ndarray:
        """Advance a block one dyadic piece; with a time-dependent
        propagator the columns are grouped by their current offset."""
        if isinstance(self.prop, _CachedPropagators):
            return self.prop.advance(states, t0, k)
        out = np.empty_like(states)
        for offset in np.unique(pos):
            mask = pos == offset
            out[:, mask] = self.prop.advance(states[:, mask],
                                             t0 + float(offset) * finest, k)
        return out

    def run_segment(self, t0: float) -> None:
        before = self.states
        after = self.prop.advance(before, t0, 0)
        norms2 = _norm2(after)
        self._check_leak(after, norms2, t0 + self.prop.dt)
        crossed = norms2 < self.thresholds
        if np.any(crossed):
            local = np.nonzero(crossed)[0]
            after = after.copy()
            after[:, local] = self._resolve_crossings(before[:, local], local, t0)
        self.states = after

    def outcomes(self) -> list[TrajectoryOutcome]:
        result = []
        for j in range(len(self.indices)):
            log = tuple(self.logs[j]) if self.logs is not None else None
            result.append(TrajectoryOutcome(
                k_net=int(self.k_net[j]), k_flux=int(self.k_flux[j]),
                t_final=self.t_final, n_jumps=int(self.n_jumps[j]), jumps=log,
            ))
        return result


def _build_channels(model: SystemModel, dim: int) -> list[_Channel]:
    lower = np.diag(np.sqrt(np.arange(1, dim)), 1)
    raise_op = lower.T.copy()
    channels = []
    for b, bath in enumerate(model.baths):
        if bath.gamma_to > 0:
            channels.append(_Channel(b, "emit", 2.0 * bath.gamma_to, lower))
        if bath.gamma_from > 0:
            channels.append(_Channel(b, "absorb", 2.0 * bath.gamma_from, raise_op))
    return channels


def _effective_hamiltonian(model: SystemModel, dim: int) -> np.ndarray:
    """H - (i/2) sum_c L_c^dag L_c on the truncated space.

    The truncated a a^dag loses its top link, matching the truncated
    absorption channel so the jump clock stays consistent.
    """
    num = np.diag(np.arange(dim, dtype=float))
    anti = np.diag(np.arange(1, dim + 1, dtype=float))
    anti[-1, -1] = float(dim - 1)
    h = model.omega * (num + 0.5 * np.eye(dim))
    decay = sum(b.gamma_to for b in model.baths) * num \
        + sum(b.gamma_from for b in model.baths) * anti
    return h.astype(np.complex128) - 1j * decay


def _drive_pieces(model: SystemModel, dim: int):
    """Quadrature operator and time profile of the drive Hamiltonian
    2 w F(t) (a + a^dag); the 2 w factor matches the force normalisation
    of the moment equations (dy/dt gains 4 w F)."""
    lower = np.diag(np.sqrt(np.arange(1, dim)), 1)
    quad = lower + lower.T
    amp = 2.0 * model.omega * model.drive.amplitude
    if model.drive.variant is DriveVariant.CONSTANT:
        return quad, lambda t: amp
    nu = model.omega + model.drive.detuning
    return quad, lambda t: amp * math.cos(nu * t)


def _make_propagator(model: SystemModel, h_eff: np.ndarray, dim: int, step: float):
    if model.drive.variant is DriveVariant.NONE:
        return _CachedPropagators(h_eff, step, _BISECTION_LEVELS)
    quad, amp = _drive_pieces(model, dim)
    if model.drive.variant is DriveVariant.CONSTANT:
        return _CachedPropagators(h_eff + amp(0.0) * quad, step, _BISECTION_LEVELS)
    return _RK4Propagators(h_eff, quad, amp, step, _BISECTION_LEVELS)


def _run_chunk(channels, t_final, seed, indices, initial_state, record_jumps,
               leak_tol, segments) -> list[TrajectoryOutcome]:
    runner = _ChunkRunner(channels, segments[0][1], t_final, seed, indices,
                          initial_state, record_jumps, leak_tol)
    t = 0.0
    for duration, prop in segments:
        runner.prop = prop
        runner.run_segment(t)
        t += duration
    return runner.outcomes()


def default_step(model: SystemModel, t_final: float) -> float:
    """Batch step: a modest fraction of the fastest rate scale, finer for
    periodic driving so RK4 resolves the force."""
    rates = derived_rates(model)
    dt = min(0.125 / rates.delta_plus, t_final / 8.0)
    if model.drive.variant is DriveVariant.PERIODIC:
        nu = abs(model.omega + model.drive.detuning)
        if nu > 0:
            dt = min(dt, 2.0 * math.pi / nu / 40.0)
    return dt


def simulate(model: SystemModel, t_final: float, n_traj: int, cutoff: int = 30,
             seed: int = 0, *, dt: float | None = None,
             initial_state="vacuum", record_jumps: bool = False,
             threads: int = 1, leak_tol: float = 1e-6) -> list[TrajectoryOutcome]:
    """Run n_traj independent trajectories to t_final.

    Deterministic for fixed (model, controls, seed): every trajectory owns
    a Philox stream keyed by (seed, index), so neither chunking nor the
    thread count changes the result. Raises CutoffLeakError when the top
    Fock level accumulates more than leak_tol of the population.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if cutoff < 2:
        raise ValueError("cutoff must be at least 2")
    rates = derived_rates(model)
    if rates.delta_minus <= 0:
        raise InvalidModelError("delta_minus must be > 0 for a steady state")

    dim = cutoff + 1
    channels = _build_channels(model, dim)
    h_eff = _effective_hamiltonian(model, dim)
    if dt is None:
        dt = default_step(model, t_final)

    n_full = int(t_final / dt)
    remainder = t_final - n_full * dt
    segments: list[tuple[float, object]] = []
    if n_full:
        main = _make_propagator(model, h_eff, dim, dt)
        segments.extend((dt, main) for _ in range(n_full))
    if remainder > 1e-12 * t_final:
        segments.append((remainder, _make_propagator(model, h_eff, dim, remainder)))

    blocks = [np.arange(start, min(start + _CHUNK_COLUMNS, n_traj))
              for start in range(0, n_traj, _CHUNK_COLUMNS)]

    def work(block):
        return _run_chunk(channels, t_final, seed, block, initial_state,
                          record_jumps, leak_tol, segments)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    outcomes: list[TrajectoryOutcome] = []
    for part in results:
        outcomes.extend(part)
    return outcomes


def estimate(outcomes, mode: CountingMode, s_grid) -> McEstimate:
    """Ensemble mean rate, Mandel Q and empirical SCGF on a bias grid.

    Mean rate is K-bar / t; Mandel Q is Var(K)/E[K] - 1 (undefined and
    reported as None when the mean count is zero). SCGF values carry
    jackknife standard errors and an effective-sample-size fraction.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptyInputError("no trajectories given")
    t_final = outcomes[0].t_final
    if any(o.t_final != t_final for o in outcomes):
        raise ValueError("outcomes mix different t_final values")
    if mode is CountingMode.NET_EXCHANGE:
        ks = np.array([o.k_net for o in outcomes], dtype=float)
    else:
        ks = np.array([o.k_flux for o in outcomes], dtype=float)
    n = ks.size
    s_values = np.asarray(list(s_grid), dtype=float)

    mean_k = ks.mean()
    mean_rate = mean_k / t_final
    rate_stderr = ks.std(ddof=1) / math.sqrt(n) / t_final if n > 1 else math.nan

    zero_activity = mean_k == 0.0
    if zero_activity or n < 3:
        q = q_err = None
    else:
        q = float(ks.var(ddof=1) / mean_k - 1.0)
        s1, s2 = ks.sum(), float(ks @ ks)
        loo_mean = (s1 - ks) / (n - 1)
        loo_var = (s2 - ks ** 2 - (n - 1) * loo_mean ** 2) / (n - 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            loo_q = loo_var / loo_mean - 1.0
        if np.all(np.isfinite(loo_q)):
            q_err = float(math.sqrt((n - 1) / n * ((loo_q - loo_q.mean()) ** 2).sum()))
        else:
            q_err = math.inf

    scgf = np.empty_like(s_values)
    scgf_err = np.empty_like(s_values)
    ess_frac = np.empty_like(s_values)
    for i, s in enumerate(s_values):
        exponent = -s * ks
        shift = exponent.max()
        w = np.exp(exponent - shift)
        total = w.sum()
        scgf[i] = (shift + math.log(total / n)) / t_final
        ess_frac[i] = total ** 2 / float(w @ w) / n
        if n > 1:
            loo = (shift + np.log((total - w) / (n - 1))) / t_final
            scgf_err[i] = math.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum())
        else:
            scgf_err[i] = math.nan

    return McEstimate(
        mode=mode, t_final=t_final, n_traj=n,
        mean_rate=float(mean_rate), mean_rate_stderr=float(rate_stderr),
        mandel_q=q, mandel_q_stderr=q_err,
        zero_activity=bool(zero_activity),
        s=s_values, scgf=scgf, scgf_stderr=scgf_err,
        ess_fraction=ess_frac, flagged=ess_frac < 0.1,
    )
