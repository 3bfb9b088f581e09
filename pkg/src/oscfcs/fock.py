"""Brute-force verifier on a truncated Fock space.

Assembles the bias-tilted generator as a sparse matrix acting on
vectorized density operators and extracts its leading (largest real part)
eigenvalue, which equals the large-deviation function. This path makes no
Gaussian assumption, so it independently checks the closed forms and the
moment ODEs.

Vectorization convention: column stacking, so the two-sided product
A . B maps to kron(B.T, A). The tilt multiplies the reference-bath
emission recycling term by e^-s and (for net-exchange counting) the
absorption recycling term by e^s.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    CutoffExceededError,
    NoConvergenceError,
    PeriodicDriveUnsupportedError,
)
from .model import (
    CountingMode,
    DriveVariant,
    SystemModel,
    derived_rates,
    validate,
)

# Dimension limit for the dense QR-based fallback eigensolver.
_DENSE_FALLBACK_DIM = 64 ** 2
# Relative top-level population above which a truncation warning fires.
_LEAK_THRESHOLD = 1e-8


@dataclass(frozen=True)
class TruncatedGenerator:
    """Tilted generator truncated at Fock level `cutoff`."""

    cutoff: int
    matrix: sp.csr_matrix
    model: SystemModel
    mode: CountingMode
    s: float

    @property
    def dim(self) -> int:
        return (self.cutoff + 1) ** 2


@dataclass(frozen=True)
class EigenResult:
    """Leading eigenvalue with convergence diagnostics."""

    theta: float
    residual: float
    cutoff_used: int
    converged: bool


def _destroy(dim: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, dim)), 1, format="csr")


def drive_coupling(model: SystemModel) -> float:
    """Microscopic amplitude of the drive term in the Hamiltonian.

    The drive amplitude F of the model multiplies the force as it enters
    the first-moment equations (dy/dt gains 4 w F); the matching
    Hamiltonian term is 2 w F (a^dag + a). The factor is fixed by the
    counting statistics of the driven zero-temperature cavity, whose mean
    emission rate must equal 8 F^2 w^2 Gamma / (Gamma^2 + w^2).
    """
    return 2.0 * model.omega * model.drive.amplitude


def build_generator(model: SystemModel, mode: CountingMode, s: float,
                    cutoff: int) -> TruncatedGenerator:
    """Assemble the tilted generator on the truncated space.

    Periodic drive would make the generator time dependent and is refused;
    the moment-ODE path covers it.
    """
    if cutoff < 4:
        raise ValueError(f"cutoff must be >= 4, got {cutoff}")
    if model.drive.variant is DriveVariant.PERIODIC:
        raise PeriodicDriveUnsupportedError(
            "periodic drive makes the generator time dependent; "
            "use the moment-ODE verifier"
        )
    validate(model, mode).raise_if_invalid()

    d = cutoff + 1
    a = _destroy(d)
    ad = a.T.tocsr()
    ident = sp.identity(d, format="csr")
    num = (ad @ a).tocsr()
    anti = (a @ ad).tocsr()

    def pre(op):
        return sp.kron(ident, op, format="csr")

    def post(op):
        return sp.kron(op.T, ident, format="csr")

    def sandwich(left, right):
        return sp.kron(right.T, left, format="csr")

    ham = model.omega * (num + 0.5 * ident)
    if model.drive.variant is DriveVariant.CONSTANT:
        ham = ham + drive_coupling(model) * (a + ad)
    gen = (-1j * (pre(ham) - post(ham))).astype(np.complex128)

    emit_scale = math.exp(-s)
    absorb_scale = math.exp(s) if mode is CountingMode.NET_EXCHANGE else 1.0
    for index, bath in enumerate(model.baths):
        em = emit_scale if index == 0 else 1.0
        ab = absorb_scale if index == 0 else 1.0
        if bath.gamma_to:
            gen = gen + bath.gamma_to * (
                2.0 * em * sandwich(a, ad) - pre(num) - post(num)
            )
        if bath.gamma_from:
            gen = gen + bath.gamma_from * (
                2.0 * ab * sandwich(ad, a) - pre(anti) - post(anti)
            )
    return TruncatedGenerator(cutoff, gen.tocsr(), model, mode, s)


def _check_leak(vec: np.ndarray, cutoff: int) -> None:
    d = cutoff + 1
    rho = vec.reshape((d, d), order="F")
    diag = np.abs(np.diag(rho))
    total = diag.sum()
    if total > 0 and diag[-1] / total > _LEAK_THRESHOLD:
        warnings.warn(
            f"top Fock level holds a fraction {diag[-1] / total:.2e} of the "
            f"biased steady state; cutoff {cutoff} may be too small",
            RuntimeWarning,
            stacklevel=3,
        )


def _shift_invert_once(matrix: sp.csr_matrix, sigma: float
                       ) -> tuple[complex, np.ndarray]:
    vals, vecs = spla.eigs(matrix.tocsc(), k=1, sigma=sigma, which="LM",
                           maxiter=5000, tol=0)
    return vals[0], vecs[:, 0]

def _residual(matrix: sp.csr_matrix, lam: complex, vec: np.ndarray) -> float:
    return float(np.linalg.norm(matrix @ vec - lam * vec) / np.linalg.norm(vec))


def _lead_shift_invert(matrix: sp.csr_matrix, sigma0: float, tol: float
                       ) -> tuple[complex, np.ndarray, float]:
    """Leading eigenvalue via shift-invert Arnoldi at two separated shifts.

    For any real shift above the spectrum the eigenvalue nearest the shift
    is the one with largest real part, so agreement between two widely
    separated shifts certifies that the right eigenvalue was found.
    """
    sigma = sigma0
    last_error = None
    for _ in range(4):
        try:
            lam1, vec1 = _shift_invert_once(matrix, sigma)
            lam2, _ = _shift_invert_once(matrix, 4.0 * sigma + 1.0)
        except (spla.ArpackError, RuntimeError) as exc:  # pragma: no cover
            last_error = exc
            sigma = 4.0 * sigma + 1.0
            continue
        scale = max(1.0, abs(lam1))
        if abs(lam1 - lam2) <= max(tol, 1e-11) * scale and lam1.real < sigma:
            return lam1, vec1, _residual(matrix, lam1, vec1)
        sigma = 4.0 * sigma + 1.0
    raise NoConvergenceError(
        f"shift-invert iterations disagreed (last error: {last_error})"
    )


def _lead_dense(matrix: sp.csr_matrix) -> tuple[complex, np.ndarray, float]:
    dense = matrix.toarray()
    vals, vecs = la.eig(dense)
    idx = int(np.argmax(vals.real))
    lam, vec = vals[idx], vecs[:, idx]
    return lam, vec, _residual(matrix, lam, vec)


def _lead_expm_power(matrix: sp.csr_matrix, tau: float, tol: float,
                     max_iters: int = 400) -> tuple[complex, np.ndarray, float]:
    """Power iteration on exp(tau * generator).

    Exponentiation turns the largest-real-part eigenvalue into the largest
    magnitude one, which makes plain power iteration reliable; slow but a
    safe fallback.
    """
    n = matrix.shape[0]
    d = int(round(math.sqrt(n)))
    vec = np.eye(d, dtype=np.complex128).reshape(-1, order="F")
    vec /= np.linalg.norm(vec)
    propagator = (matrix * tau).tocsc()
    lam_old = None
    for iteration in range(max_iters):
        vec = spla.expm_multiply(propagator, vec)
        vec /= np.linalg.norm(vec)
        lam = complex(np.vdot(vec, matrix @ vec))
        if lam_old is not None and abs(lam - lam_old) < 0.1 * tol * max(1.0, abs(lam)):
            return lam, vec, _residual(matrix, lam, vec)
        lam_old = lam
    raise NoConvergenceError("exponential power iteration stalled",
                             iterations=max_iters)


def leading_eigenvalue(gen: TruncatedGenerator, tol: float = 1e-10) -> EigenResult:
    """Largest-real-part eigenvalue of the tilted generator.

    Shift-invert Arnoldi with cross-checked shifts is the primary solver;
    a dense QR solve (small dimensions) and exponential power iteration
    serve as fallbacks. The leading eigenvalue is real for these models,
    so a significant imaginary part marks the result as unconverged.
    """
    rates = derived_rates(gen.model)
    sigma0 = rates.delta_plus + gen.model.omega + 1.0
    if gen.model.drive.variant is DriveVariant.CONSTANT:
        # crude spectral headroom for strong driving
        sigma0 += 16.0 * gen.model.drive.amplitude ** 2 * rates.delta_plus

    attempts = [lambda: _lead_shift_invert(gen.matrix, sigma0, tol)]
    if gen.dim <= _DENSE_FALLBACK_DIM:
        attempts.append(lambda: _lead_dense(gen.matrix))
    attempts.append(lambda: _lead_expm_power(gen.matrix, 2.0 / max(rates.delta_plus, 1e-3), tol))

    last_error: Exception | None = None
    for attempt in attempts:
        try:
            lam, vec, resid = attempt()
        except NoConvergenceError as exc:
            last_error = exc
            continue
        _check_leak(vec, gen.cutoff)
        scale = max(1.0, abs(lam.real))
        imag_ok = abs(lam.imag) <= max(100.0 * tol, 1e-8) * scale
        resid_ok = resid <= max(1e3 * tol, 1e-7)
        return EigenResult(theta=float(lam.real), residual=resid,
                           cutoff_used=gen.cutoff,
                           converged=bool(imag_ok and resid_ok))
    raise NoConvergenceError(f"all eigensolvers failed: {last_error}")


def converge_cutoff(model: SystemModel, mode: CountingMode, s: float,
                    tol: float = 1e-8, cutoff_start: int = 8,
                    cutoff_max: int = 128) -> EigenResult:
    """Double the cutoff until successive eigenvalues agree within tol.

    Near branch points the biased state delocalises and no finite cutoff
    stabilises the value; that surfaces as CutoffExceededError carrying
    the last two estimates.
    """
    if cutoff_start < 8:
        raise ValueError(f"cutoff_start must be >= 8, got {cutoff_start}")
    history: list[float] = []
    previous: EigenResult | None = None
    cutoff = cutoff_start
    while cutoff <= cutoff_max:
        result = leading_eigenvalue(build_generator(model, mode, s, cutoff), tol=tol)
        history.append(result.theta)
        if (previous is not None and previous.converged and result.converged
                and abs(result.theta - previous.theta) < tol):
            return result
        previous = result
        cutoff *= 2
    raise CutoffExceededError(
        f"eigenvalue did not stabilise below cutoff {cutoff_max} at s = {s}",
        last_estimates=tuple(history[-2:]),
    )


def dump_matrix(gen: TruncatedGenerator, path) -> None:
    """Write the generator as text, one stored entry per line.

    Format: `row col real imag` (0-indexed, whitespace separated, row-major
    order, 17 significant digits). The entries are complex because of the
    Hamiltonian commutator, hence two value columns.
    """
    coo = gen.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="ascii") as handle:
        for idx in order:
            value = coo.data[idx]
            handle.write(
                f"{coo.row[idx]} {coo.col[idx]} {value.real:.17g} {value.imag:.17g}\n"
            )


def load_matrix(path, dim: int) -> sp.csr_matrix:
    """Read a matrix written by dump_matrix."""
    rows, cols, data = [], [], []
    with open(path, "r", encoding="ascii") as handle:
        for line in handle:
            parts = line.split()
            if not parts:
                continue
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            data.append(float(parts[2]) + 1j * float(parts[3]))
    return sp.coo_matrix((data, (rows, cols)), shape=(dim, dim)).tocsr()
