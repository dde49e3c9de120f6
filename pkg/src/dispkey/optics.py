"""Mode unitaries, their lift to multimode Fock space, and multimode displacements.

Convention: the network maps a_i^dag -> sum_j U[j, i] a_j^dag, so a single
photon entering mode i leaves in column i of U and a displacement key alpha
is carried to beta = U @ alpha.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numba as nb
import numpy as np
from scipy.special import gammaln

from .fock import CutoffError, PureFockState, displacement_buffer, displacement_matrix

MAX_SECTOR_SIZE = 100_000
# sectors above this photon number are lifted by the creation-operator recursion
PERMANENT_MAX_PHOTONS = 8


@dataclass(frozen=True)
class ModeUnitary:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError("mode unitary must be a nonempty square matrix")
        if np.max(np.abs(m.conj().T @ m - np.eye(len(m)))) > 1e-10:
            raise ValueError("matrix is not unitary to 1e-10")
        object.__setattr__(self, "matrix", m)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other: "ModeUnitary") -> "ModeUnitary":
        return ModeUnitary(self.matrix @ other.matrix)

    @classmethod
    def identity(cls, m: int) -> "ModeUnitary":
        return cls(np.eye(m))

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "entries": [[[z.real, z.imag] for z in row] for row in self.matrix]})

    @classmethod
    def from_json(cls, text: str) -> "ModeUnitary":
        data = json.loads(text)
        try:
            entries = np.array([[complex(re, im) for re, im in row] for row in data["entries"]])
            m = int(data["m"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed unitary file: {exc}") from exc
        if entries.shape != (m, m):
            raise ValueError(f"expected a {m}x{m} matrix, got shape {entries.shape}")
        return cls(entries)

    @classmethod
    def load(cls, path) -> "ModeUnitary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class DisplacementKey:
    alphas: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alphas, dtype=complex))
        if not np.all(np.isfinite(a)):
            raise ValueError("key entries must be finite")
        object.__setattr__(self, "alphas", a)

    @property
    def m(self) -> int:
        return len(self.alphas)

    def __neg__(self) -> "DisplacementKey":
        return DisplacementKey(-self.alphas)


def haar_random_unitary(m: int, seed) -> ModeUnitary:
    """Haar-distributed unitary from QR of a complex Ginibre matrix."""
    if m < 1:
        raise ValueError("m must be positive")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return ModeUnitary(q * (d / np.abs(d)))


def beamsplitter(theta: float) -> ModeUnitary:
    c, s = math.cos(theta), math.sin(theta)
    return ModeUnitary(np.array([[c, s], [-s, c]]))


def phase_shifter(phi: float) -> ModeUnitary:
    return ModeUnitary(np.array([[np.exp(1j * phi)]]))


def embed(small: ModeUnitary, positions, m: int) -> ModeUnitary:
    """Act with ``small`` on the listed modes of an m-mode network."""
    positions = list(positions)
    if len(set(positions)) != len(positions):
        raise ValueError(f"positions collide: {positions}")
    if len(positions) != small.m or any(not 0 <= p < m for p in positions):
        raise ValueError("positions do not match the small unitary or the mode count")
    full = np.eye(m, dtype=complex)
    full[np.ix_(positions, positions)] = small.matrix
    return ModeUnitary(full)


def key_transform(u: ModeUnitary, key: DisplacementKey) -> DisplacementKey:
    if u.m != key.m:
        raise ValueError(f"unitary acts on {u.m} modes, key has {key.m}")
    return DisplacementKey(u.matrix @ key.alphas)


# ---------------------------------------------------------------------------
# permanents and the Fock lift


@nb.njit(cache=True)
def _ryser_gray(a):
    n = a.shape[0]
    if n == 0:
        return 1.0 + 0.0j
    row_sums = np.zeros(n, dtype=np.complex128)
    total = 0.0 + 0.0j
    sign = -1.0 if n % 2 else 1.0
    gray = 0
    for k in range(1, 1 << n):
        new_gray = k ^ (k >> 1)
        changed = new_gray ^ gray
        j = 0
        while not (changed >> j) & 1:
            j += 1
        if new_gray & changed:
            for r in range(n):
                row_sums[r] += a[r, j]
        else:
            for r in range(n):
                row_sums[r] -= a[r, j]
        gray = new_gray
        prod = 1.0 + 0.0j
        for r in range(n):
            prod *= row_sums[r]
        sign = -sign
        total += sign * prod
    return total


def permanent(a) -> complex:
    """Permanent by Ryser's formula with Gray-code column updates."""
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("permanent needs a square matrix")
    return complex(_ryser_gray(a))


@dataclass(frozen=True)
class FockSector:
    modes: int
    total_photons: int

    @property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        return _sector_basis(self.modes, self.total_photons)

    @property
    def size(self) -> int:
        return math.comb(self.total_photons + self.modes - 1, self.modes - 1)

    def index(self) -> dict:
        return _sector_index(self.modes, self.total_photons)


@lru_cache(maxsize=None)
def _sector_basis(m, s):
    if m == 1:
        return ((s,),)
    out = []
    for first in range(s + 1):
        out.extend((first,) + rest for rest in _sector_basis(m - 1, s - first))
    return tuple(out)


@lru_cache(maxsize=None)
def _sector_index(m, s):
    return {t: idx for idx, t in enumerate(_sector_basis(m, s))}


def _expand(occ):
    return [mode for mode, k in enumerate(occ) for _ in range(k)]


def _lift_by_permanents(u: np.ndarray, sector: FockSector) -> np.ndarray:
    basis = sector.basis
    logfact = [gammaln(np.array(t) + 1.0).sum() for t in basis]
    block = np.empty((len(basis), len(basis)), dtype=complex)
    for c, n_in in enumerate(basis):
        cols = _expand(n_in)
        for r, n_out in enumerate(basis):
            sub = u[np.ix_(_expand(n_out), cols)]
            block[r, c] = permanent(sub) * math.exp(-0.5 * (logfact[r] + logfact[c]))
    return block


@lru_cache(maxsize=None)
def _creation_maps(m, s):
    """Index tables for building sector s from sector s-1.

    ``rows[q, j]`` is the sector-s position of (basis_{s-1}[q] + e_j) and
    ``amps[q, j]`` its sqrt(n_j + 1) factor; ``first``/``parent``/``norm``
    pick, for each sector-s tuple, its first occupied mode i, the tuple
    with one photon removed from i, and sqrt(n_i).
    """
    src = _sector_basis(m, s - 1)
    dst = _sector_index(m, s)
    rows = np.empty((len(src), m), dtype=np.int64)
    amps = np.empty((len(src), m))
    for q, occ in enumerate(src):
        for j in range(m):
            rows[q, j] = dst[occ[:j] + (occ[j] + 1,) + occ[j + 1 :]]
            amps[q, j] = math.sqrt(occ[j] + 1)
    basis = _sector_basis(m, s)
    prev_index = _sector_index(m, s - 1)
    first = np.array([next(i for i, k in enumerate(t) if k) for t in basis])
    parent = np.array([prev_index[t[:i] + (t[i] - 1,) + t[i + 1 :]] for t, i in zip(basis, first)])
    norm = np.sqrt(np.array([t[i] for t, i in zip(basis, first)], dtype=float))
    return rows, amps, first, parent, norm


def _recursive_step(u: np.ndarray, prev: np.ndarray, s: int) -> np.ndarray:
    """Sector-s block from the sector-(s-1) block.

    phi(U)|n> = (sum_j U[j, i] a_j^dag) phi(U)|n - e_i> / sqrt(n_i).
    """
    m = u.shape[0]
    rows, amps, first, parent, norm = _creation_maps(m, s)
    size = len(first)
    block = np.zeros((size, size), dtype=complex)
    cols = prev[:, parent]
    for j in range(m):
        contrib = (amps[:, j : j + 1] * cols) * (u[j, first] / norm)[None, :]
        np.add.at(block, rows[:, j], contrib)
    return block


def _recursive_blocks(u: np.ndarray, smax: int) -> list[np.ndarray]:
    blocks = [np.ones((1, 1), dtype=complex)]
    for s in range(1, smax + 1):
        blocks.append(_recursive_step(u, blocks[-1], s))
    return blocks


class _LiftCache:
    """Sector blocks per unitary, grown on demand; small LRU over unitaries."""

    def __init__(self, max_unitaries=8):
        self.max_unitaries = max_unitaries
        self._store: dict[bytes, list[np.ndarray]] = {}

    def blocks(self, u: np.ndarray, smax: int) -> list[np.ndarray]:
        key = u.tobytes() + str(u.shape).encode()
        blocks = self._store.pop(key, None)
        if blocks is None:
            blocks = []
        for s in range(len(blocks), smax + 1):
            if s <= PERMANENT_MAX_PHOTONS:
                blocks.append(_lift_by_permanents(u, FockSector(u.shape[0], s)))
            else:
                blocks.append(_recursive_step(u, blocks[-1], s))
        self._store[key] = blocks
        while len(self._store) > self.max_unitaries:
            self._store.pop(next(iter(self._store)))
        return blocks


_lift_cache = _LiftCache()


def lift_unitary(u: ModeUnitary, sector: FockSector, method: str = "auto") -> np.ndarray:
    """Block of phi(U) on one total-photon sector, rows/cols in sector basis order.

    <n'|phi(U)|n> = per(U[rows n', cols n]) / sqrt(prod n! prod n'!). Small
    sectors use Ryser permanents directly; larger ones use the
    creation-operator recursion, which avoids the cancellation Ryser's
    alternating sum suffers at high photon number.
    """
    if sector.modes != u.m:
        raise ValueError("sector and unitary disagree on the mode count")
    if sector.size > MAX_SECTOR_SIZE:
        raise ValueError(f"sector basis of size {sector.size} exceeds {MAX_SECTOR_SIZE}")
    if method == "auto":
        method = "permanent" if sector.total_photons <= PERMANENT_MAX_PHOTONS else "recursive"
    if method == "permanent":
        return _lift_by_permanents(u.matrix, sector)
    if method == "recursive":
        return _recursive_blocks(u.matrix, sector.total_photons)[-1]
    raise ValueError(f"unknown method {method!r}")


@lru_cache(maxsize=None)
def _sector_array(m, s):
    return np.array(_sector_basis(m, s), dtype=np.int64).reshape(-1, m)


def _sector_gather(shape, m, s):
    """Positions of the sector-s basis tuples that fit inside ``shape``, and their flat tensor indices."""
    basis = _sector_array(m, s)
    keep = np.flatnonzero(np.all(basis < np.asarray(shape), axis=1))
    return keep, np.ravel_multi_index(basis[keep].T, shape)


@lru_cache(maxsize=1024)
def _lift_plan(in_shape, smax):
    """Per-sector gather/scatter indices taking a tensor of ``in_shape`` to the (smax+1)^m box."""
    m = len(in_shape)
    out_shape = (smax + 1,) * m
    plan = []
    for s in range(min(smax, sum(d - 1 for d in in_shape)) + 1):
        keep_in, flat_in = _sector_gather(in_shape, m, s)
        keep_out, flat_out = _sector_gather(out_shape, m, s)
        plan.append((s, _sector_array(m, s).shape[0], keep_in, flat_in, keep_out, flat_out))
    return plan


def apply_lifted(u: ModeUnitary, state: PureFockState) -> PureFockState:
    """phi(U)|psi>, sector by sector up to the state's total-photon cutoff."""
    if state.modes != u.m:
        raise ValueError("state and unitary disagree on the mode count")
    m, smax = u.m, state.max_photons
    out = np.zeros((smax + 1,) * m, dtype=complex)
    flat = out.reshape(-1)
    src = state.tensor.reshape(-1)
    blocks = _lift_cache.blocks(u.matrix, smax)
    for s, size, keep_in, flat_in, keep_out, flat_out in _lift_plan(state.tensor.shape, smax):
        vec = np.zeros(size, dtype=complex)
        vec[keep_in] = src[flat_in]
        flat[flat_out] = (blocks[s] @ vec)[keep_out]
    return PureFockState(out, max_photons=smax)


def multimode_cutoffs(n_total: int, alphas, betas=None) -> list[int]:
    """Per-mode cutoff n + ceil(4 g^2 + 8 g) + 10 with g = max(|alpha_j|, |beta_j|)."""
    alphas = np.abs(np.asarray(alphas, dtype=complex))
    g = alphas if betas is None else np.maximum(alphas, np.abs(np.asarray(betas, dtype=complex)))
    return [n_total + displacement_buffer(float(x)) for x in g]


def multimode_displace(key: DisplacementKey, state: PureFockState, cutoffs, max_leakage: float = 1e-6) -> tuple[PureFockState, float]:
    """Apply the product of single-mode displacements D(alpha_j).

    Returns the renormalised state on the per-mode ``cutoffs`` box and the
    norm lost to truncation. A loss above ``max_leakage`` raises
    :class:`CutoffError` naming the mode where most of it occurred.
    """
    if key.m != state.modes:
        raise ValueError("key and state disagree on the mode count")
    cutoffs = [int(c) for c in cutoffs]
    if any(c < d - 1 for c, d in zip(cutoffs, state.tensor.shape)):
        raise ValueError("cutoffs smaller than the state's support")
    tensor = state.padded(cutoffs).tensor
    losses = []
    norm_before = 1.0
    for j, (alpha, c) in enumerate(zip(key.alphas, cutoffs)):
        if alpha != 0:
            d = displacement_matrix(alpha, max(c, 1))[: c + 1, : c + 1]
            tensor = np.moveaxis(np.tensordot(d, tensor, axes=([1], [j])), 0, j)
        norm_after = float(np.linalg.norm(tensor) ** 2)
        losses.append(norm_before - norm_after)
        norm_before = norm_after
    leakage = 1.0 - norm_before
    if leakage > max_leakage:
        worst = int(np.argmax(losses))
        raise CutoffError(f"displacement leaked {leakage:.3g} of the norm (mode {worst})", mode=worst, leakage=leakage)
    tensor = tensor / math.sqrt(norm_before)
    return PureFockState(tensor), leakage
