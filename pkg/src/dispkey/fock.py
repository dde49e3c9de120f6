"""Truncated Fock-space states, density matrices and displacement operators."""

from __future__ import annotations

import itertools
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eig_banded, eigh_tridiagonal


class CutoffError(RuntimeError):
    """Raised when a truncated Fock space is too small for the requested accuracy."""

    def __init__(self, message, mode=None, leakage=None):
        super().__init__(message)
        self.mode = mode
        self.leakage = leakage


@dataclass(frozen=True)
class DisplacementAmplitude:
    """alpha = u + i v."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("displacement components must be finite")

    @property
    def value(self) -> complex:
        return complex(self.u, self.v)

    @classmethod
    def from_complex(cls, alpha: complex) -> "DisplacementAmplitude":
        alpha = complex(alpha)
        return cls(alpha.real, alpha.imag)


def as_complex(alpha) -> complex:
    if isinstance(alpha, DisplacementAmplitude):
        return alpha.value
    return complex(alpha)


def displacement_buffer(alpha_abs: float) -> int:
    """Extra levels needed below a reported cutoff when exponentiating D(alpha)."""
    return math.ceil(8 * alpha_abs + 4 * alpha_abs**2) + 10


def occupation_basis(modes: int, max_photons: int) -> list[tuple[int, ...]]:
    """Occupation tuples with total <= max_photons, in lexicographic order."""
    return [t for t in itertools.product(range(max_photons + 1), repeat=modes) if sum(t) <= max_photons]


@dataclass
class PureFockState:
    """Pure state stored as a dense amplitude tensor, one axis per mode.

    Axis ``j`` has length ``cutoff_j + 1``. Entries whose occupations sum
    above ``max_photons`` must be zero.
    """

    tensor: np.ndarray
    max_photons: int | None = None
    norm_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=complex)
        if self.tensor.ndim == 0:
            raise ValueError("state needs at least one mode")
        box_total = sum(d - 1 for d in self.tensor.shape)
        if self.max_photons is None:
            self.max_photons = box_total
        if self.max_photons < box_total:
            mask = self.total_photon_grid() > self.max_photons
            if np.any(np.abs(self.tensor[mask]) > 0):
                raise ValueError("amplitude outside the total-photon cutoff")
        norm = np.linalg.norm(self.tensor)
        if abs(norm**2 - 1.0) > self.norm_tol:
            raise ValueError(f"state not normalised: |psi|^2 = {norm**2!r}")

    @property
    def modes(self) -> int:
        return self.tensor.ndim

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(d - 1 for d in self.tensor.shape)

    def total_photon_grid(self) -> np.ndarray:
        total = np.zeros(self.tensor.shape, dtype=np.int64)
        for ax, d in enumerate(self.tensor.shape):
            total += np.arange(d).reshape((-1,) + (1,) * (self.modes - ax - 1))
        return total

    @classmethod
    def single_mode(cls, amplitudes, normalize=False) -> "PureFockState":
        amps = np.asarray(amplitudes, dtype=complex)
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(amps, max_photons=len(amps) - 1)

    @classmethod
    def fock(cls, occupations, cutoffs=None) -> "PureFockState":
        occ = tuple(int(n) for n in np.atleast_1d(occupations))
        max_photons = None
        if cutoffs is None:
            cutoffs = (sum(occ),) * len(occ)
            max_photons = sum(occ)
        tensor = np.zeros([c + 1 for c in cutoffs], dtype=complex)
        tensor[occ] = 1.0
        return cls(tensor, max_photons=max_photons)

    @classmethod
    def from_basis_amplitudes(cls, modes: int, max_photons: int, amplitudes, renormalize_tol=None):
        basis = occupation_basis(modes, max_photons)
        amps = np.asarray(amplitudes, dtype=complex)
        if len(amps) != len(basis):
            raise ValueError(f"expected {len(basis)} amplitudes, got {len(amps)}")
        norm2 = float(np.vdot(amps, amps).real)
        if renormalize_tol is not None:
            if abs(norm2 - 1.0) > renormalize_tol:
                raise ValueError(f"state norm^2 {norm2} not within {renormalize_tol} of 1")
            amps = amps / math.sqrt(norm2)
        tensor = np.zeros((max_photons + 1,) * modes, dtype=complex)
        for occ, amp in zip(basis, amps):
            tensor[occ] = amp
        return cls(tensor, max_photons=max_photons)

    def basis_amplitudes(self) -> tuple[list[tuple[int, ...]], np.ndarray]:
        """Amplitudes over the lexicographic basis with total <= max_photons."""
        basis = [t for t in itertools.product(*[range(d) for d in self.tensor.shape]) if sum(t) <= self.max_photons]
        return basis, np.array([self.tensor[t] for t in basis])

    def padded(self, cutoffs) -> "PureFockState":
        """Same state embedded in a larger per-mode box."""
        cutoffs = tuple(cutoffs)
        if len(cutoffs) != self.modes or any(c < d - 1 for c, d in zip(cutoffs, self.tensor.shape)):
            raise ValueError("padding cannot shrink the state")
        tensor = np.zeros([c + 1 for c in cutoffs], dtype=complex)
        tensor[tuple(slice(0, d) for d in self.tensor.shape)] = self.tensor
        return PureFockState(tensor, max_photons=self.max_photons)

    def to_json(self) -> str:
        _, amps = self.basis_amplitudes()
        return json.dumps(
            {
                "modes": self.modes,
                "max_photons": int(self.max_photons),
                "amplitudes": [[a.real, a.imag] for a in amps],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PureFockState":
        data = json.loads(text)
        try:
            modes = int(data["modes"])
            max_photons = int(data["max_photons"])
            amps = [complex(re, im) for re, im in data["amplitudes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed state file: {exc}") from exc
        return cls.from_basis_amplitudes(modes, max_photons, amps, renormalize_tol=1e-6)

    @classmethod
    def load(cls, path) -> "PureFockState":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass
class DensityMatrix:
    """Hermitian matrix in the number basis.

    ``bandwidth`` is the largest ``|row - col|`` holding a nonzero entry and
    ``tail_deficit`` is the probability mass lost to truncation.
    """

    entries: np.ndarray
    bandwidth: int | None = None
    tail_deficit: float = 0.0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("density matrix must be square")
        if self.bandwidth is None:
            self.bandwidth = measured_bandwidth(self.entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return math.fsum(np.diagonal(self.entries).real)

    def eigenvalues(self) -> np.ndarray:
        return hermitian_eigenvalues(self.entries, self.bandwidth)

    @classmethod
    def from_pure(cls, state: PureFockState) -> "DensityMatrix":
        v = state.tensor.ravel()
        return cls(np.outer(v, v.conj()))


def measured_bandwidth(m: np.ndarray) -> int:
    rows, cols = np.nonzero(m)
    return int(np.max(np.abs(rows - cols))) if len(rows) else 0


def coherent_amplitudes(alpha, cutoff: int) -> np.ndarray:
    """e^{-|alpha|^2/2} alpha^n / sqrt(n!) for n = 0..cutoff."""
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    alpha = as_complex(alpha)
    out = np.empty(cutoff + 1, dtype=complex)
    out[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, cutoff + 1):
        out[n] = out[n - 1] * alpha / math.sqrt(n)
    return out


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim)), 1)


@lru_cache(maxsize=64)
def _quadrature_eigensystem(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigensystem of the truncated a + a^dag (real symmetric tridiagonal)."""
    lam, vecs = eigh_tridiagonal(np.zeros(dim), np.sqrt(np.arange(1.0, dim)))
    lam.flags.writeable = False
    vecs.flags.writeable = False
    return lam, vecs


def displacement_matrix(alpha, cutoff: int, buffer: int | None = None) -> np.ndarray:
    """Block ``[0..cutoff]^2`` of D(alpha) = exp(alpha a^dag - alpha^* a).

    The generator is exponentiated on ``cutoff + buffer + 1`` levels and the
    result cropped, so boundary effects of the truncated generator stay out
    of the reported block. With W = diag((i e^{i arg alpha})^n) the generator
    is -i|alpha| W (a + a^dag) W^dag, so the exponential only needs the
    (cached, alpha-independent) eigensystem of a + a^dag.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    alpha = as_complex(alpha)
    if buffer is None:
        buffer = displacement_buffer(abs(alpha))
    dim = cutoff + buffer + 1
    lam, vecs = _quadrature_eigensystem(dim)
    w = (1j * np.exp(1j * np.angle(alpha))) ** np.arange(dim)
    left = (w[: cutoff + 1, None] * vecs[: cutoff + 1]) * np.exp(-1j * abs(alpha) * lam)
    d = left @ (vecs[: cutoff + 1].T * np.conj(w[: cutoff + 1]))
    if not np.all(np.isfinite(d)):
        raise CutoffError(f"displacement buffer {buffer} too small for |alpha|={abs(alpha):.3g}")
    return d


def displaced_fock_columns(alphas: np.ndarray, max_fock: int, cutoff: int) -> np.ndarray:
    """<a|D(alpha)|i> for a <= cutoff, i <= max_fock, batched over ``alphas``.

    Uses D(alpha)|i> = (a^dag - alpha^*)^i |alpha> / sqrt(i!). Each row ``a``
    only draws on rows ``a-1`` and ``a`` of the previous column, so entries up
    to the cutoff are exact despite truncation. Shape ``(len(alphas), cutoff+1, max_fock+1)``.
    """
    alphas = np.asarray(alphas, dtype=complex).ravel()
    cols = np.empty((len(alphas), cutoff + 1, max_fock + 1), dtype=complex)
    c = np.empty((len(alphas), cutoff + 1), dtype=complex)
    c[:, 0] = np.exp(-0.5 * np.abs(alphas) ** 2)
    for n in range(1, cutoff + 1):
        c[:, n] = c[:, n - 1] * alphas / math.sqrt(n)
    cols[:, :, 0] = c
    sq = np.sqrt(np.arange(cutoff + 1))
    for i in range(1, max_fock + 1):
        prev = cols[:, :, i - 1]
        nxt = -np.conj(alphas)[:, None] * prev
        nxt[:, 1:] += sq[1:] * prev[:, :-1]
        cols[:, :, i] = nxt / math.sqrt(i)
    return cols


def hermitian_eigenvalues(m: np.ndarray, bandwidth: int | None = None) -> np.ndarray:
    """Eigenvalues of a Hermitian matrix, via LAPACK's banded solver when narrow."""
    dim = m.shape[0]
    if bandwidth is None:
        bandwidth = measured_bandwidth(m)
    if dim > 8 and bandwidth <= dim // 8:
        bands = np.zeros((bandwidth + 1, dim), dtype=complex)
        for k in range(bandwidth + 1):
            bands[k, : dim - k] = np.diagonal(m, -k)
        return eig_banded(bands, lower=True, eigvals_only=True)
    return np.linalg.eigvalsh(m)


def trace_norm(m, bandwidth: int | None = None, atol: float = 1e-10) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    if isinstance(m, DensityMatrix):
        bandwidth, m = m.bandwidth, m.entries
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if np.max(np.abs(m - m.conj().T)) > atol:
        raise ValueError("trace norm needs a Hermitian matrix")
    return math.fsum(np.abs(hermitian_eigenvalues(m, bandwidth)))


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    if rho.dim != sigma.dim:
        raise ValueError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    bw = max(rho.bandwidth, sigma.bandwidth)
    return 0.5 * trace_norm(rho.entries - sigma.entries, bandwidth=bw)


def fidelity(psi: PureFockState, phi: PureFockState) -> float:
    """|<psi|phi>|^2."""
    if psi.tensor.shape != phi.tensor.shape:
        raise ValueError(f"shape mismatch: {psi.tensor.shape} vs {phi.tensor.shape}")
    return float(min(1.0, abs(np.vdot(psi.tensor, phi.tensor)) ** 2))
