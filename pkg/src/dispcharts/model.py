"""In-control process model, covariance shift constructions, standardization.

The monitored process is p correlated characteristics observed as vectors
x_t ~ N(mu0, sigma0) while in control. Charts operate on standardized data
y_t = sigma0^{-1/2} (x_t - mu0), which is N(0, I_p) in control.

Out-of-control covariances come in three flavours:

* overall        -- every variance scaled by delta
* overall_corr   -- variances scaled by delta and all pairwise correlations
                    set to rho
* partial        -- the first q variances scaled by delta with correlation
                    rho inside that q-block; the remaining variables keep
                    their in-control variances and stay uncorrelated

For ``partial`` the shifted block uses the post-shift scales, so with q = p
it coincides exactly with ``overall_corr``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .numerics import as_sym_matrix, cholesky, inv_sqrt_sym


class Observation(NamedTuple):
    t: int
    x: np.ndarray


@dataclass(frozen=True)
class ProcessModel:
    """In-control mean vector and covariance for p characteristics."""

    mu0: np.ndarray
    sigma0: np.ndarray
    _isqrt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu0, dtype=np.float64).reshape(-1)
        sig = as_sym_matrix(self.sigma0, "sigma0")
        if sig.shape[0] != mu.shape[0]:
            raise ConfigError(
                f"dimension mismatch: mu0 has length {mu.shape[0]}, sigma0 is {sig.shape[0]}x{sig.shape[0]}"
            )
        cholesky(sig)  # raises if not positive definite
        object.__setattr__(self, "mu0", mu)
        object.__setattr__(self, "sigma0", sig)
        object.__setattr__(self, "_isqrt", inv_sqrt_sym(sig))

    @property
    def p(self) -> int:
        return self.mu0.shape[0]

    def inv_sqrt_sigma0(self) -> np.ndarray:
        return self._isqrt

    @classmethod
    def standard(cls, p: int) -> "ProcessModel":
        """The standardized in-control model N(0, I_p)."""
        return cls(np.zeros(p), np.eye(p))


class ShiftKind(str, Enum):
    OVERALL = "overall"
    OVERALL_CORR = "overall_corr"
    PARTIAL = "partial"


NEVER = None  # changepoint sentinel: the shift never arrives


@dataclass(frozen=True)
class ShiftScenario:
    """Covariance shift description plus the changepoint time.

    tau is the time index of the first out-of-control observation;
    tau=None means the stream stays in control forever.
    """

    kind: ShiftKind = ShiftKind.OVERALL
    delta: float = 1.0
    rho: float = 0.0
    q: Optional[int] = None
    tau: Optional[int] = 1

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.kind is ShiftKind.PARTIAL:
            if self.q is None or self.q < 1:
                raise ConfigError("partial shifts require q >= 1")
        if self.tau is not None and self.tau < 1:
            raise ConfigError(f"tau must be >= 1 or None, got {self.tau}")

    @classmethod
    def in_control(cls) -> "ShiftScenario":
        return cls(kind=ShiftKind.OVERALL, delta=1.0, rho=0.0, tau=NEVER)


def build_covariance(model: ProcessModel, scenario: ShiftScenario) -> np.ndarray:
    """Out-of-control covariance for the given shift scenario."""
    p = model.p
    sig = model.sigma0
    sd = np.sqrt(np.diag(sig))
    delta, rho = scenario.delta, scenario.rho

    if scenario.kind is ShiftKind.OVERALL:
        return delta * sig

    if scenario.kind is ShiftKind.OVERALL_CORR:
        corr = np.full((p, p), rho)
        np.fill_diagonal(corr, 1.0)
        out = delta * (np.outer(sd, sd) * corr)
        _require_pd(out)
        return out

    q = scenario.q
    if q > p:
        raise ConfigError(f"partial shift q={q} exceeds dimension p={p}")
    out = np.diag(np.diag(sig)).astype(np.float64)
    block_sd = np.sqrt(delta) * sd[:q]
    corr = np.full((q, q), rho)
    np.fill_diagonal(corr, 1.0)
    out[:q, :q] = np.outer(block_sd, block_sd) * corr
    _require_pd(out)
    return out


def _require_pd(cov: np.ndarray) -> None:
    try:
        cholesky(cov)
    except Exception as exc:
        raise ConfigError(f"shift scenario produces a non positive definite covariance: {exc}") from exc


def is_shifted(model: ProcessModel, scenario: ShiftScenario) -> bool:
    """True when the scenario actually changes the covariance at some finite time."""
    if scenario.tau is NEVER:
        return False
    shifted = build_covariance(model, scenario)
    return not np.allclose(shifted, model.sigma0, rtol=0.0, atol=1e-15)


def standardize(x: np.ndarray, model: ProcessModel) -> np.ndarray:
    """Map a raw observation (or an array of rows) into standardized space."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != model.p:
        raise DataError(f"observation has {arr.shape[-1]} components, model expects {model.p}")
    return (arr - model.mu0) @ model.inv_sqrt_sigma0()


def phase1_estimate(data) -> ProcessModel:
    """Estimate (mu0, sigma0) from historical in-control data.

    data is an (m, p) array or a sequence of Observation; the covariance
    uses the m-1 divisor. Raises DataError when m <= p or the sample
    covariance is singular.
    """
    if isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=np.float64)
    else:
        rows = [obs.x if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64) for obs in data]
        arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"phase I data must be a 2-d array of observations, got shape {arr.shape}")
    m, p = arr.shape
    if m < p + 1:
        raise DataError(f"phase I estimation needs at least p+1={p + 1} observations, got {m}")
    mu = arr.mean(axis=0)
    centered = arr - mu
    cov = centered.T @ centered / (m - 1)
    cov = 0.5 * (cov + cov.T)
    try:
        return ProcessModel(mu, cov)
    except Exception as exc:
        raise DataError(
            "phase I sample covariance is singular or indefinite; collect more "
            f"(or more varied) observations: {exc}"
        ) from exc


def observations_from_array(arr: np.ndarray, start_time: int = 1) -> list[Observation]:
    """Wrap the rows of an (m, p) array as Observation records."""
    a = np.asarray(arr, dtype=np.float64)
    return [Observation(start_time + i, a[i]) for i in range(a.shape[0])]
