"""Hermite functions, log-space combinatorics and Gauss-Legendre grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln

MAX_HERMITE_ORDER = 200

# rescale the recurrence once magnitudes pass this, to keep the carried
# log-scale exact enough and the mantissas finite
_RESCALE_AT = 1e150


def hermite_h(n: int, x):
    """Physicists' Hermite polynomial H_n(x) by the three-term recurrence.

    Large orders overflow to ``inf``; use :func:`hermite_psi` there.
    """
    if n < 0 or n > MAX_HERMITE_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_HERMITE_ORDER}], got {n}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n):
            h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
    return h if h.ndim else float(h)


def hermite_functions(nmax: int, x) -> np.ndarray:
    """All Hermite functions psi_0..psi_nmax at ``x``, shape ``(nmax+1, *x.shape)``.

    Runs the normalised recurrence
    psi_{k+1} = sqrt(2/(k+1)) x psi_k - sqrt(k/(k+1)) psi_{k-1}
    on rescaled mantissas while carrying the Gaussian envelope as a separate
    log-scale, so neither e^{-x^2/2} underflow nor growth in the tails is lost.
    """
    if nmax < 0 or nmax > MAX_HERMITE_ORDER:
        raise ValueError(f"order must lie in [0, {MAX_HERMITE_ORDER}], got {nmax}")
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    log_scale = -0.5 * x * x
    prev = np.zeros_like(x)
    cur = np.full_like(x, np.pi ** -0.25)
    out[0] = cur * np.exp(log_scale)
    for k in range(nmax):
        prev, cur = cur, math.sqrt(2.0 / (k + 1)) * x * cur - math.sqrt(k / (k + 1)) * prev
        big = np.abs(cur) > _RESCALE_AT
        if np.any(big):
            s = np.where(big, np.abs(cur), 1.0)
            cur = cur / s
            prev = prev / s
            log_scale = log_scale + np.log(s)
        with np.errstate(under="ignore"):
            out[k + 1] = cur * np.exp(log_scale)
    return out


def hermite_psi(n: int, x):
    """Hermite function psi_n(x) = e^{-x^2/2} H_n(x) / sqrt(2^n n! sqrt(pi))."""
    vals = hermite_functions(n, x)[n]
    return vals if vals.ndim else float(vals)


def log_binomial(n: int, k: int) -> float:
    """ln C(n, k), accurate to ~1e-10 absolute for n up to 10**6."""
    if k < 0 or n < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")
    k = min(k, n - k)
    if k == 0:
        return 0.0
    if n <= 1000:
        return math.log(math.comb(n, k))
    if k <= 64:
        return math.fsum(math.log1p((n - k) / t) for t in range(1, k + 1))
    # lgamma differences lose ~eps*ln(n!) here; 30 digits covers n <= 1e6 easily
    with mpmath.workdps(30):
        val = mpmath.loggamma(n + 1) - mpmath.loggamma(k + 1) - mpmath.loggamma(n - k + 1)
        return float(val)


@dataclass
class LogFactorialTable:
    """Precomputed ln(k!) for k = 0..max_index, for vectorised binomials."""

    max_index: int
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.max_index < 0:
            raise ValueError("max_index must be nonnegative")
        self.values = gammaln(np.arange(self.max_index + 1) + 1.0)
        self.values[:2] = 0.0

    def log_binomial(self, n, k):
        """Elementwise ln C(n, k); entries with k outside [0, n] give -inf."""
        n = np.asarray(n)
        k = np.asarray(k)
        ok = (k >= 0) & (k <= n)
        nn = np.where(ok, n, 0)
        kk = np.where(ok, k, 0)
        vals = self.values[nn] - self.values[kk] - self.values[nn - kk]
        return np.where(ok, vals, -np.inf)


def geometric_binomial_sum(x: float, k: int) -> float:
    """Closed form of sum_{a>=k} x^a C(a, k) = x^k / (1-x)^(k+1)."""
    if not 0.0 < x < 1.0:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    if k < 0:
        raise ValueError("k must be nonnegative")
    return x**k / (1.0 - x) ** (k + 1)


def lemma7_inequality_check(a: int, i: int, i2: int, k: int) -> bool:
    """Check C(a,i2) C(i,i2) <= C(a+k,i2+k) C(i+k,i2+k) in exact integers."""
    if i2 > min(a, i):
        raise ValueError("need i2 <= min(a, i)")
    return math.comb(a, i2) * math.comb(i, i2) <= math.comb(a + k, i2 + k) * math.comb(i + k, i2 + k)


@dataclass(frozen=True)
class QuadratureGrid:
    """One-dimensional composite rule; ``domain`` is the interval ``(lo, hi)``."""

    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple[float, float]

    def __post_init__(self):
        if len(self.nodes) < 2 or len(self.nodes) != len(self.weights):
            raise ValueError("need at least two nodes with matching weights")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def gauss_legendre_grid(lo: float, hi: float, order: int = 32, panels: int = 1) -> QuadratureGrid:
    """Composite Gauss-Legendre rule with ``panels`` equal panels on [lo, hi]."""
    if hi <= lo:
        raise ValueError("empty interval")
    g, w = leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return QuadratureGrid(nodes, weights, (float(lo), float(hi)))


def tensor_grid(*grids: QuadratureGrid) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product nodes ``(N, d)`` and weights ``(N,)`` of 1-D grids."""
    mesh = np.meshgrid(*[g.nodes for g in grids], indexing="ij")
    wmesh = np.meshgrid(*[g.weights for g in grids], indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    return nodes, weights
