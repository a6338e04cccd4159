"""Deterministic linear-algebra and distribution primitives.

Symmetric matrices are plain float64 numpy arrays; every operation checks
symmetry (1e-12 relative) at its boundary. Dimensions stay small (p up to
a few dozen), so exactness and reproducibility win over speed throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError

SYM_RTOL = 1e-12


def as_sym_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a square symmetric float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > SYM_RTOL * scale:
        raise NumericsError(f"{name} is not symmetric to within {SYM_RTOL} relative")
    return m


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a for symmetric positive definite a.

    Raises NumericsError naming the failing pivot when a is not positive
    definite.
    """
    m = as_sym_matrix(a)
    p = m.shape[0]
    lower = np.zeros_like(m)
    for j in range(p):
        d = m[j, j] - np.dot(lower[j, :j], lower[j, :j])
        if d <= 0.0 or not math.isfinite(d):
            raise NumericsError(
                f"cholesky decomposition failed at pivot {j}: "
                f"leading minor is not positive definite (pivot value {d:.6g})"
            )
        lower[j, j] = math.sqrt(d)
        if j + 1 < p:
            lower[j + 1 :, j] = (m[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def inv_sqrt_sym(a) -> np.ndarray:
    """Symmetric B with B @ a @ B == identity, via symmetric eigendecomposition.

    Eigenvalues at or below tolerance (relative to the largest) raise
    NumericsError.
    """
    m = as_sym_matrix(a)
    w, v = np.linalg.eigh(m)
    tol = 1e-12 * max(1.0, float(w[-1]))
    if w[0] <= tol:
        raise NumericsError(
            f"matrix inverse square root requires positive definiteness; "
            f"smallest eigenvalue {w[0]:.6g} is at or below tolerance {tol:.6g}"
        )
    b = (v / np.sqrt(w)) @ v.T
    return 0.5 * (b + b.T)


def det_sym(a) -> float:
    """Determinant of a symmetric matrix via LU factorization."""
    m = as_sym_matrix(a)
    return float(np.linalg.det(m))


# --- chi-squared distribution -------------------------------------------
#
# Quantiles come from inverting the regularized lower incomplete gamma
# function P(a, x): series expansion below the a+1 crossover, continued
# fraction above, then Newton polish on the quantile. Good to ~1e-12
# relative over the degrees of freedom this package uses.

_GAMMA_EPS = 1e-15
_GAMMA_MAX_ITER = 400


def _gamma_p_series(a: float, x: float) -> float:
    # P(a,x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # Q(a,x) via Lentz's method on the standard continued fraction.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0.0:
        raise NumericsError(f"gamma_p requires a > 0, got {a}")
    if x < 0.0:
        raise NumericsError(f"gamma_p requires x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def chisq_cdf(v: int, x: float) -> float:
    """P(chi2_v <= x) for v degrees of freedom."""
    if v < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {v}")
    if x <= 0.0:
        return 0.0
    return gamma_p(0.5 * v, 0.5 * x)


def _chisq_logpdf(v: int, x: float) -> float:
    h = 0.5 * v
    return (h - 1.0) * math.log(x) - 0.5 * x - h * math.log(2.0) - math.lgamma(h)


def chisq_quantile(v: int, beta: float) -> float:
    """x with P(chi2_v <= x) = beta.

    Wilson-Hilferty starting point, Newton iterations on the CDF, bisection
    safeguard. beta outside (0, 1) is a domain error.
    """
    if v < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {v}")
    if not (0.0 < beta < 1.0):
        raise ConfigError(f"beta must lie strictly in (0, 1), got {beta}")

    # Wilson-Hilferty: chi2_v ~ v * (1 - 2/(9v) + z sqrt(2/(9v)))^3
    z = _std_normal_quantile(beta)
    c = 2.0 / (9.0 * v)
    x = v * (1.0 - c + z * math.sqrt(c)) ** 3
    if x <= 0.0:
        x = math.exp((math.log(beta * v) + math.lgamma(0.5 * v) + 0.5 * v * math.log(2.0)) / (0.5 * v))

    lo, hi = 0.0, math.inf
    for _ in range(200):
        f = chisq_cdf(v, x) - beta
        if f > 0.0:
            hi = x
        else:
            lo = x
        step = f * math.exp(-_chisq_logpdf(v, x)) if x > 0 else 0.0
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + (hi if math.isfinite(hi) else 2.0 * x + 1.0))
        if abs(x_new - x) <= 1e-14 * max(x, 1.0):
            return x_new
        x = x_new
    return x


def _std_normal_quantile(q: float) -> float:
    # Acklam-style rational approximation, then one Halley polish step.
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    p_low = 0.02425
    if q < p_low:
        u = math.sqrt(-2.0 * math.log(q))
        x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) / \
            ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0)
    elif q <= 1.0 - p_low:
        u = q - 0.5
        r = u * u
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        u = math.sqrt(-2.0 * math.log(1.0 - q))
        x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) / \
            ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# --- reproducible random streams ----------------------------------------


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    Streams are keyed counter-based generators (Philox), so distinct
    (master_seed, stream_id) pairs are independent by construction and a
    given pair always produces the same sequence regardless of thread
    count or draw batching. A single stream must not be shared across
    threads concurrently.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if not 0 <= self.stream_id < 2**64:
            raise ConfigError(f"stream_id must be a 64-bit unsigned integer, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at the start of this stream."""
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)


def std_normal(stream: RngStream, count: int) -> np.ndarray:
    """count i.i.d. standard normal draws from the start of stream."""
    return stream.generator().standard_normal(count)
