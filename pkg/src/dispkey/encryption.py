"""Gaussian displacement-key encryption channel and its security quantities.

The channel displaces a single mode by alpha = u + i v with u, v drawn
independently from Normal(0, sigma). Three constructions of the encrypted
density matrix are provided (closed form, Monte Carlo, and a quadrature of
the position-space integral for individual matrix elements) so that each can
be checked against the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import eig_banded
from scipy.special import logsumexp

from .fock import (
    CutoffError,
    DensityMatrix,
    PureFockState,
    displaced_fock_columns,
    hermitian_eigenvalues,
)
from .special_math import (
    LogFactorialTable,
    gauss_legendre_grid,
    hermite_functions,
    log_binomial,
)

# adaptive cutoff search gives up beyond this
MAX_CUTOFF = 1 << 16
# dense density matrices above this cutoff would take gigabytes
MAX_DENSE_CUTOFF = 6000


class QuadratureError(RuntimeError):
    pass


class BoundPreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class EncryptionParams:
    sigma: float
    tail_eps: float = 1e-10

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.tail_eps > 0:
            raise ValueError("tail_eps must be positive")

    @classmethod
    def from_variance(cls, sigma_sq: float, tail_eps: float = 1e-10) -> "EncryptionParams":
        return cls(math.sqrt(sigma_sq), tail_eps)

    @property
    def sigma_sq(self) -> float:
        return self.sigma**2

    @property
    def x(self) -> float:
        return 2 * self.sigma_sq / (1 + 2 * self.sigma_sq)

    @property
    def y(self) -> float:
        return 1 / (2 * self.sigma_sq)


@dataclass
class EncryptedDensity:
    matrix: DensityMatrix
    params: EncryptionParams
    method: str
    cutoff: int
    mc_seed: int | None = None
    std_error: np.ndarray | None = field(default=None, repr=False)

    @property
    def trace_deficit(self) -> float:
        return self.matrix.tail_deficit


# ---------------------------------------------------------------------------
# matrix elements I_{a,b,i,j} = <a| E(|i><j|) |b>


def i_closed_form(a: int, b: int, i: int, j: int, params: EncryptionParams) -> float:
    """Exact <a|E(|i><j|)|b> from the generating-function sum.

    Only one summation index is free once the four linear constraints are
    imposed: i1 = a - i2, i3 = i2 + (b - a), i4 = i - i2.
    """
    if min(a, b, i, j) < 0:
        raise ValueError("indices must be nonnegative")
    if b - a != j - i:
        return 0.0
    if (b, a, j, i) < (a, b, i, j):
        # I_{abij} = I_{baji}; one canonical summation order makes the symmetry bit-exact
        a, b, i, j = b, a, j, i
    logs = []
    for i2 in range(min(a, i) + 1):
        i3 = i2 + (b - a)
        if i3 < 0 or i3 > min(b, j):
            continue
        logs.append(
            (i2 + i3) * math.log(params.y)
            + 0.5 * (log_binomial(a, i2) + log_binomial(b, i3) + log_binomial(i, i2) + log_binomial(j, i3))
        )
    if not logs:
        return 0.0
    top = max(logs)
    total = math.fsum(math.exp(t - top) for t in logs)
    log_val = top + math.log(total) + 0.5 * (a + b + i + j) * math.log(params.x) - math.log1p(2 * params.sigma_sq)
    return math.exp(log_val)


def channel_band(k: int, i: int, params: EncryptionParams, a_max: int, table: LogFactorialTable | None = None) -> np.ndarray:
    """Vector of I_{a, a+k, i, i+k} for a = 0..a_max (k >= 0)."""
    if k < 0:
        raise ValueError("use the (a,b,i,j) -> (b,a,j,i) symmetry for k < 0")
    a = np.arange(a_max + 1)
    if table is None or table.max_index < a_max + k + i:
        table = LogFactorialTable(a_max + k + i + 1)
    i2 = np.arange(i + 1)[:, None]
    logc = (
        table.log_binomial(a[None, :], i2)
        + table.log_binomial(a[None, :] + k, i2 + k)
        + table.log_binomial(i, i2)
        + table.log_binomial(i + k, i2 + k)
    )
    terms = (2 * i2 + k) * math.log(params.y) + 0.5 * logc
    log_sum = logsumexp(terms, axis=0)
    log_val = log_sum + (a + i + k) * math.log(params.x) - math.log1p(2 * params.sigma_sq)
    return np.exp(log_val)


def i_quadrature_table(nmax: int, params: EncryptionParams, tol: float = 1e-8, order: int = 32, max_panels: int = 256) -> np.ndarray:
    """I_{a,b,i,j} for all indices <= nmax by direct quadrature of the position-space integral.

    Evaluates (1/(2 sqrt(pi) sigma)) int du e^{-u^2/4sigma^2} int int dx dy
    e^{-sigma^2 (x-y)^2} psi_i(x) psi_j(y) psi_a(x+u) psi_b(y+u) on the box
    u in [-8 sigma, 8 sigma], x, y in [-L, L] with L = sqrt(2 nmax + 1) + 6.
    Panel counts double until two successive tables agree within ``tol``.
    Returns an array indexed ``[a, b, i, j]``.
    """
    s = params.sigma
    half_x = math.sqrt(2 * nmax + 1) + 6
    half_u = 8 * s
    prev = None
    panels = 2
    while panels <= max_panels:
        # u needs panels relative to the box size, x/y relative to the kernel width 1/sigma
        pu = max(panels, math.ceil(panels * half_u / half_x))
        px = max(panels, math.ceil(panels * s / 2))
        ug = gauss_legendre_grid(-half_u, half_u, order, pu)
        xg = gauss_legendre_grid(-half_x, half_x, order, px)
        table = _i_quadrature_on_grid(nmax, params, ug, xg)
        if prev is not None and np.max(np.abs(table - prev)) < tol:
            return table
        prev = table
        panels *= 2
    raise QuadratureError(f"quadrature did not reach tol={tol:g} within {max_panels} panels")


def _i_quadrature_on_grid(nmax, params, ug, xg):
    s2 = params.sigma_sq
    x = xg.nodes
    wx = xg.weights
    u = ug.nodes
    wu = ug.weights * np.exp(-(u**2) / (4 * s2)) / (2 * math.sqrt(math.pi) * params.sigma)
    psi_x = hermite_functions(nmax, x)  # (n, X)
    psi_shift = hermite_functions(nmax, x[None, :] + u[:, None])  # (n, U, X)
    kernel = np.exp(-s2 * (x[:, None] - x[None, :]) ** 2)
    # F[i, a, u, x] = psi_i(x) psi_a(x+u) w_x
    f = psi_x[:, None, None, :] * psi_shift[None, :, :, :] * wx
    fk = f @ kernel  # contract x -> y
    # I[a,b,i,j] = sum_u wu sum_y fk[i,a,u,y] f[j,b,u,y]
    return np.einsum("u,iauy,jbuy->abij", wu, fk, f, optimize=True)


def i_quadrature(a: int, b: int, i: int, j: int, params: EncryptionParams, tol: float = 1e-8) -> float:
    """Single matrix element by quadrature (oracle regime: indices <= 8)."""
    nmax = max(a, b, i, j)
    if nmax > 8:
        raise ValueError("quadrature oracle supports indices up to 8")
    return float(i_quadrature_table(nmax, params, tol)[a, b, i, j])


# ---------------------------------------------------------------------------
# encrypted density matrices


def _single_mode_amplitudes(state: PureFockState) -> np.ndarray:
    if state.modes != 1:
        raise ValueError("the encryption channel is assembled for single-mode states")
    return state.tensor[: state.max_photons + 1]


def _diagonal(lams: np.ndarray, params: EncryptionParams, cutoff: int, table) -> np.ndarray:
    diag = np.zeros(cutoff + 1)
    for i, lam in enumerate(lams):
        w = abs(lam) ** 2
        if w:
            diag += w * channel_band(0, i, params, cutoff, table)
    return diag


def adaptive_cutoff(state: PureFockState, params: EncryptionParams) -> int:
    """Smallest cutoff whose diagonal leaves a trace deficit <= tail_eps.

    Starts at ceil((1+2 sigma^2) ln(1/eps)) + n and doubles until the
    deficit is met, then trims back to the minimal index that meets it.
    """
    lams = _single_mode_amplitudes(state)
    n = len(lams) - 1
    eps = params.tail_eps
    cutoff = math.ceil((1 + 2 * params.sigma_sq) * math.log(1 / eps)) + n
    deficit = None
    while True:
        if cutoff > MAX_CUTOFF:
            raise CutoffError(f"trace deficit above {eps:g} at the cutoff limit {MAX_CUTOFF} (last deficit {deficit})", leakage=deficit)
        diag = _diagonal(lams, params, cutoff, LogFactorialTable(cutoff + 2 * n + 1))
        deficit = 1.0 - math.fsum(diag)
        if deficit <= eps:
            break
        cutoff *= 2
    remaining = 1.0 - np.cumsum(diag)
    return int(np.argmax(remaining <= eps))


def encrypted_bands(state: PureFockState, params: EncryptionParams, cutoff: int) -> np.ndarray:
    """Lower bands of the encrypted density: ``bands[k, a] = <a+k|rho_enc|a>``.

    Shape ``(n+1, cutoff+1)``; entries past the matrix edge are zero.
    """
    lams = _single_mode_amplitudes(state)
    n = len(lams) - 1
    dim = cutoff + 1
    table = LogFactorialTable(cutoff + 2 * n + 1)
    bands = np.zeros((n + 1, dim), dtype=complex)
    for i in range(n + 1):
        for j in range(i, n + 1):
            k = j - i
            coeff = lams[i] * np.conj(lams[j])
            if coeff == 0 or dim - k <= 0:
                continue
            # <a|rho|a+k> = coeff I_{a,a+k,i,j}, and the lower entry is its conjugate
            bands[k, : dim - k] += np.conj(coeff) * channel_band(k, i, params, dim - 1 - k, table)
    return bands


def _dense_from_bands(bands: np.ndarray) -> np.ndarray:
    dim = bands.shape[1]
    rho = np.zeros((dim, dim), dtype=complex)
    rows = np.arange(dim)
    for k in range(bands.shape[0]):
        r = rows[: dim - k]
        rho[r + k, r] = bands[k, : dim - k]
        if k:
            rho[r, r + k] = np.conj(bands[k, : dim - k])
    return rho


def encrypt_closed_form(state: PureFockState, params: EncryptionParams, cutoff: int | None = None) -> EncryptedDensity:
    """<a|rho_enc|b> = sum_{i,j} lam_i lam_j^* I_{a,b,i,j} for a, b <= cutoff."""
    if cutoff is None:
        cutoff = adaptive_cutoff(state, params)
    if cutoff > MAX_DENSE_CUTOFF:
        raise CutoffError(f"dense assembly at cutoff {cutoff} exceeds {MAX_DENSE_CUTOFF}; use encrypted_distance for large sigma")
    bands = encrypted_bands(state, params, cutoff)
    n = bands.shape[0] - 1
    deficit = 1.0 - math.fsum(bands[0].real)
    matrix = DensityMatrix(_dense_from_bands(bands), bandwidth=min(n, cutoff), tail_deficit=deficit)
    return EncryptedDensity(matrix, params, "closed_form", cutoff)


def encrypt_monte_carlo(
    state: PureFockState,
    params: EncryptionParams,
    samples: int,
    cutoff: int,
    seed: int,
    chunk: int = 4096,
) -> EncryptedDensity:
    """Sample average of D(alpha)|psi><psi|D(alpha)^dag in the cutoff space.

    The standard error attached to each entry is sqrt(E|X - EX|^2 / S),
    with the variance taken over the displacement draws.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    lams = _single_mode_amplitudes(state)
    n = len(lams) - 1
    rng = np.random.default_rng(seed)
    u = rng.normal(0.0, params.sigma, samples)
    v = rng.normal(0.0, params.sigma, samples)
    alphas = u + 1j * v
    dim = cutoff + 1
    acc = np.zeros((dim, dim), dtype=complex)
    acc_sq = np.zeros((dim, dim))
    for start in range(0, samples, chunk):
        cols = displaced_fock_columns(alphas[start : start + chunk], n, cutoff)
        vecs = cols @ lams  # (S, dim)
        outer = vecs[:, :, None] * vecs[:, None, :].conj()
        acc += outer.sum(axis=0)
        acc_sq += (np.abs(outer) ** 2).sum(axis=0)
    mean = acc / samples
    var = np.maximum(acc_sq / samples - np.abs(mean) ** 2, 0.0) * samples / (samples - 1)
    stderr = np.sqrt(var / samples)
    deficit = 1.0 - math.fsum(np.diagonal(mean).real)
    matrix = DensityMatrix(mean, bandwidth=cutoff, tail_deficit=deficit)
    return EncryptedDensity(matrix, params, "monte_carlo", cutoff, mc_seed=seed, std_error=stderr)


# ---------------------------------------------------------------------------
# bound ingredients


def diagonal_recurrence(i: int, a: int, params: EncryptionParams) -> tuple[float, float]:
    """Both sides of the one-step change of an encrypted Fock-state diagonal.

    lhs = <a|rho_{i+1}|a> - <a|rho_i|a> from exact matrix elements;
    rhs = -<a|rho_i|a>/(2 sigma^2 + 1)
          + x^{a+i+1}/(1+2 sigma^2) * sum_{k=1}^{min(a, i+1)} C(a,k) C(i,k-1) y^{2k}.
    The upper summation limit is min(a, i+1); with min(a, i) the identity
    fails whenever a > i.
    """
    x, y = params.x, params.y
    cur = i_closed_form(a, a, i, i, params)
    lhs = i_closed_form(a, a, i + 1, i + 1, params) - cur
    tail = math.fsum(math.comb(a, k) * math.comb(i, k - 1) * y ** (2 * k) for k in range(1, min(a, i + 1) + 1))
    rhs = -cur / (2 * params.sigma_sq + 1) + x ** (a + i + 1) / (1 + 2 * params.sigma_sq) * tail
    return lhs, rhs


def diagonal_step_bound(i: int, params: EncryptionParams) -> float:
    """Bound (1/(2 sigma^2)) (1 + 1/(2 sigma^2))^i on 1/2 |rho_{i+1} - rho_i|_1."""
    return params.y * (1 + params.y) ** i


class DiagonalBound(NamedTuple):
    bound: float
    simplified: float | None


def diagonal_pair_distance_bound(i: int, j: int, n: int, params: EncryptionParams) -> DiagonalBound:
    """Telescoped bound on 1/2 |rho_i - rho_j|_1 for i < j <= n."""
    if not 0 <= i < j <= n:
        raise ValueError("need 0 <= i < j <= n")
    bound = n * params.y * (1 + params.y) ** n
    simplified = 2**n * n / params.sigma_sq / 2 if params.sigma_sq >= 0.5 else None
    return DiagonalBound(bound, simplified)


class RowSum(NamedTuple):
    value: float
    tail: float
    bound: float
    simplified: float

    @property
    def holds(self) -> bool:
        return self.value + self.tail <= self.bound


def offdiag_row_sum(i: int, k: int, params: EncryptionParams, cutoff: int) -> RowSum:
    """sum_a |<a|rho_{i,i+k}|a+k>| over a <= cutoff, with a rigorous tail.

    Each term is at most (y/x)^k <a+k|rho_{i+k}|a+k>, so the terms past the
    cutoff sum to at most (y/x)^k times the trace deficit of rho_{i+k} at
    cutoff + k.
    """
    if 2 * params.sigma_sq < 1:
        raise BoundPreconditionError("row-sum bound needs 2 sigma^2 >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    table = LogFactorialTable(cutoff + 2 * (i + k) + 2)
    value = math.fsum(channel_band(k, i, params, cutoff, table))
    diag = channel_band(0, i + k, params, cutoff + k, table)
    deficit = max(0.0, 1.0 - math.fsum(diag))
    ratio = params.y / params.x
    return RowSum(value, ratio**k * deficit, ratio**k, params.sigma_sq ** (-k))


class SecurityBound(NamedTuple):
    trace_norm: float
    trace_distance: float


def security_bound(n: int, params: EncryptionParams) -> SecurityBound:
    """(2^n n + 8(n+1))/sigma^2 on the 1-norm, half of it on the trace distance."""
    if n < 1:
        raise ValueError("n must be positive")
    if params.sigma_sq < 2:
        raise BoundPreconditionError(
            f"the security bound assumes sigma^2 >= 2 (got {params.sigma_sq:g})"
        )
    norm_bound = (2**n * n + 8 * (n + 1)) / params.sigma_sq
    return SecurityBound(norm_bound, (2 ** (n - 1) * n + 4 * (n + 1)) / params.sigma_sq)


@dataclass
class DistanceReport:
    measured: float
    error: float
    bound: float | None
    diag_part: float
    offdiag_part: float
    cutoff: int
    n: int

    @property
    def satisfied(self) -> bool | None:
        if self.bound is None:
            return None
        return self.measured - self.error <= self.bound


def _max_photons(state: PureFockState) -> int:
    lams = _single_mode_amplitudes(state)
    nz = np.nonzero(np.abs(lams) > 0)[0]
    return int(nz[-1]) if len(nz) else 0


def encrypted_distance(state_a: PureFockState, state_b: PureFockState, params: EncryptionParams, n: int | None = None) -> DistanceReport:
    """Trace distance of two encrypted single-mode states, with the security bound.

    Both encryptions share the larger of the two adaptive cutoffs. The
    difference is kept in banded storage, so memory grows like n times the
    cutoff. The error bar is twice the larger trace deficit.
    """
    if n is None:
        n = max(1, _max_photons(state_a), _max_photons(state_b))
    cutoff = max(adaptive_cutoff(state_a, params), adaptive_cutoff(state_b, params))
    ba = encrypted_bands(state_a, params, cutoff)
    bb = encrypted_bands(state_b, params, cutoff)
    width = max(len(ba), len(bb))
    diff = np.zeros((width, cutoff + 1), dtype=complex)
    diff[: len(ba)] += ba
    diff[: len(bb)] -= bb
    measured = 0.5 * math.fsum(np.abs(eig_banded(diff, lower=True, eigvals_only=True)))
    error = 2 * max(abs(1.0 - math.fsum(ba[0].real)), abs(1.0 - math.fsum(bb[0].real)))
    diag_part = 0.5 * math.fsum(np.abs(diff[0]))
    offdiag_part = math.fsum(np.abs(diff[1:]).ravel())
    try:
        bound = security_bound(n, params).trace_distance
    except BoundPreconditionError:
        bound = None
    return DistanceReport(measured, error, bound, diag_part, offdiag_part, cutoff, n)


def min_eigenvalue(enc: EncryptedDensity) -> float:
    return float(np.min(hermitian_eigenvalues(enc.matrix.entries, enc.matrix.bandwidth)))
