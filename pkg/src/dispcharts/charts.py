"""The five dispersion charts as resettable state machines.

Each chart consumes standardized data (individual vectors for MEWMS,
SubgroupWindow objects otherwise) and returns a ChartOutput carrying the
plotted statistic, the control limits in force, and the signal flag.
Signals use strict inequalities on both sides.

Chart statistics:

* MEWMS -- trace of the exponentially weighted sum-of-squares matrix
  e_t = omega * y y' + (1-omega) * e_{t-1}, seeded with e_0 = y_1 y_1',
  against time-varying limits p +/- L sqrt(2 p c_t).
* GVC   -- determinant of the centered sample covariance of a
  non-overlapping subgroup, against b1 +/- L_gvc sqrt(b2) (LCL floored
  at zero).
* NTCC / OTCC -- trace of the centered sample covariance of a
  non-overlapping / overlapping subgroup. NTCC limits are exact
  chi-squared quantiles; OTCC limits must be supplied explicitly
  (serial correlation between overlapping windows breaks the quantile
  argument, so they come from numeric calibration).
* OTMC  -- trace of the mean squared successive difference estimator
  over an overlapping subgroup, using the n-1 adjacent differences
  inside the window; explicit calibrated limits.

The module also ships reference control constants tuned for an in-control
average time to signal of 370 time units, for every (p, n) / (p, omega)
configuration this package studies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .errors import ConfigError
from .numerics import chisq_quantile, det_sym
from .windows import AggregationMode, AggregationPolicy, SubgroupWindow


class ChartVariant(str, Enum):
    MEWMS = "mewms"
    GVC = "gvc"
    NTCC = "ntcc"
    OTCC = "otcc"
    OTMC = "otmc"


#: Design target used for all shipped reference constants (time units).
DESIGN_ATS0 = 370.0

#: MEWMS chart constant L by (p, omega), tuned for DESIGN_ATS0 under
#: steady-state evaluation.
MEWMS_L = {
    (2, 0.2): 3.4964,
    (2, 0.9): 4.9,
    (10, 0.2): 3.02,
    (10, 0.9): 3.779,
}

#: GVC chart constant L_gvc by (p, n), same design target.
GVC_L = {
    (2, 3): 4.778,
    (2, 5): 3.571,
    (2, 10): 2.550,
    (10, 11): 0.660,
    (10, 15): 1.375,
    (10, 20): 1.435,
}

#: Explicit (lcl, ucl) pairs for the overlapping trace chart by (p, n).
OTCC_LIMITS = {
    (2, 3): (0.056738, 8.746398),
    (2, 5): (0.257927, 6.101049),
    (2, 10): (0.646292, 4.301269),
    (10, 11): (6.564921, 14.29510),
    (10, 15): (7.120220, 13.45174),
    (10, 20): (7.572200, 12.81552),
}

#: Explicit (lcl, ucl) pairs for the overlapping successive-difference
#: chart by (p, n).
OTMC_LIMITS = {
    (2, 3): (0.036211, 9.726786),
    (2, 5): (0.185008, 6.872069),
    (2, 10): (0.517543, 4.823367),
    (10, 11): (6.047177, 15.20931),
    (10, 15): (6.650895, 14.19955),
    (10, 20): (7.156457, 13.42693),
}


def ntcc_alpha(n: int, target_ats: float = DESIGN_ATS0) -> float:
    """Per-window type I error giving the target in-control ATS for NTCC.

    With windows completing every n ticks, a false-alarm rate of n/target
    per window yields the target time to signal. (For target 370 this is
    the familiar 0.0027 * n, unrounded.)
    """
    return n / target_ats


@dataclass(frozen=True)
class ChartOutput:
    time: int
    statistic: float
    lcl: float
    ucl: float
    signal: bool


@dataclass(frozen=True)
class ChartConfig:
    """Variant plus the tuning constants that pin down its control limits.

    Exactly one limit source applies per variant: L for MEWMS, L_gvc for
    GVC, alpha (or an explicit pair) for NTCC, an explicit (lcl, ucl)
    pair for OTCC and OTMC.
    """

    variant: ChartVariant
    p: int
    n: int = 1
    omega: Optional[float] = None
    limit_constant: Optional[float] = None
    alpha: Optional[float] = None
    limits: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError(f"dimension p must be >= 1, got {self.p}")
        v = self.variant
        if v is ChartVariant.MEWMS:
            if self.n != 1:
                raise ConfigError("MEWMS monitors individual observations (n must be 1)")
            if self.omega is None or not 0.0 < self.omega < 1.0:
                raise ConfigError(f"MEWMS smoothing omega must lie strictly in (0, 1), got {self.omega}")
            if self.limit_constant is None:
                raise ConfigError("MEWMS requires the limit constant L")
            return
        if self.n < self.p + 1:
            raise ConfigError(
                f"{v.value} needs subgroup size n >= p+1 (centered covariance has rank n-1); "
                f"got n={self.n}, p={self.p}"
            )
        if v is ChartVariant.GVC:
            if self.limit_constant is None:
                raise ConfigError("GVC requires the limit constant L_gvc")
        elif v is ChartVariant.NTCC:
            if self.alpha is None and self.limits is None:
                raise ConfigError("NTCC requires alpha or an explicit (lcl, ucl) pair")
            if self.alpha is not None and not 0.0 < self.alpha < 1.0:
                raise ConfigError(f"NTCC alpha must lie in (0, 1), got {self.alpha}")
        else:  # OTCC / OTMC
            if self.limits is None:
                raise ConfigError(f"{v.value} requires an explicit (lcl, ucl) pair")
        if self.limits is not None and self.limits[0] >= self.limits[1]:
            raise ConfigError(f"lcl must be below ucl, got {self.limits}")

    def policy(self) -> AggregationPolicy:
        if self.variant is ChartVariant.MEWMS:
            return AggregationPolicy.individual()
        if self.variant in (ChartVariant.GVC, ChartVariant.NTCC):
            return AggregationPolicy.non_overlapping(self.n)
        return AggregationPolicy.overlapping(self.n)

    def control_limits(self) -> tuple[float, float]:
        """Constant (lcl, ucl) for grouped variants; MEWMS limits vary in time."""
        if self.variant is ChartVariant.MEWMS:
            raise ConfigError("MEWMS limits are time-varying; use MewmsChart.limits_at")
        if self.variant is ChartVariant.GVC:
            consts = gvc_constants(self.p, self.n)
            half = self.limit_constant * math.sqrt(consts.b2)
            return (max(consts.b1 - half, 0.0), consts.b1 + half)
        if self.variant is ChartVariant.NTCC and self.limits is None:
            nu = self.p * (self.n - 1)
            lcl = chisq_quantile(nu, self.alpha / 2.0) / (self.n - 1)
            ucl = chisq_quantile(nu, 1.0 - self.alpha / 2.0) / (self.n - 1)
            return (lcl, ucl)
        return self.limits


def default_config(variant: Union[ChartVariant, str], p: int, n: Optional[int] = None,
                   omega: Optional[float] = None) -> ChartConfig:
    """Config using the shipped reference constants for the 370 design target."""
    v = ChartVariant(variant)
    if v is ChartVariant.MEWMS:
        if omega is None:
            raise ConfigError("MEWMS default config needs omega")
        key = (p, omega)
        if key not in MEWMS_L:
            raise ConfigError(f"no reference MEWMS constant for p={p}, omega={omega}")
        return ChartConfig(v, p=p, omega=omega, limit_constant=MEWMS_L[key])
    if n is None:
        raise ConfigError(f"{v.value} default config needs subgroup size n")
    key = (p, n)
    if v is ChartVariant.GVC:
        if key not in GVC_L:
            raise ConfigError(f"no reference GVC constant for p={p}, n={n}")
        return ChartConfig(v, p=p, n=n, limit_constant=GVC_L[key])
    if v is ChartVariant.NTCC:
        return ChartConfig(v, p=p, n=n, alpha=ntcc_alpha(n))
    table = OTCC_LIMITS if v is ChartVariant.OTCC else OTMC_LIMITS
    if key not in table:
        raise ConfigError(f"no reference {v.value} limits for p={p}, n={n}")
    return ChartConfig(v, p=p, n=n, limits=table[key])


@dataclass(frozen=True)
class GvcConstants:
    b1: float
    b2: float


def gvc_constants(p: int, n: int) -> GvcConstants:
    """Mean and variance factors of det(S) for a centered sample covariance.

    b1 = (n-1)^-p prod_{i=1..p} (n-i)
    b2 = (n-1)^-2p prod_{i=1..p} (n-i) [prod_{j=1..p} (n-j+2) - prod_{j=1..p} (n-j)]
    """
    if n < p + 1:
        raise ConfigError(f"generalized variance constants need n >= p+1, got n={n}, p={p}")
    prod_lo = math.prod(n - i for i in range(1, p + 1))
    prod_hi = math.prod(n - j + 2 for j in range(1, p + 1))
    b1 = prod_lo / (n - 1) ** p
    b2 = prod_lo * (prod_hi - prod_lo) / (n - 1) ** (2 * p)
    return GvcConstants(b1=b1, b2=b2)


def centered_covariance(window: SubgroupWindow) -> np.ndarray:
    """Sample covariance of a window's columns, mean-centered, n-1 divisor."""
    cols = window.columns
    n = cols.shape[1]
    centered = cols - cols.mean(axis=1, keepdims=True)
    return centered @ centered.T / (n - 1)


def mssd_matrix(window: SubgroupWindow) -> np.ndarray:
    """Mean squared successive difference estimator from within-window differences."""
    cols = window.columns
    n = cols.shape[1]
    diffs = cols[:, 1:] - cols[:, :-1]
    return diffs @ diffs.T / (2.0 * (n - 1))


class MewmsChart:
    """Individual-observation chart on tr(e_t) with time-varying limits."""

    def __init__(self, cfg: ChartConfig):
        if cfg.variant is not ChartVariant.MEWMS:
            raise ConfigError("MewmsChart requires a MEWMS config")
        self.cfg = cfg
        self.t = 0
        self.e = np.zeros((cfg.p, cfg.p))

    def limits_at(self, t: int) -> tuple[float, float]:
        cfg = self.cfg
        c = limit_decay(cfg.omega, t)
        half = cfg.limit_constant * math.sqrt(2.0 * cfg.p * c)
        return (cfg.p - half, cfg.p + half)

    def asymptotic_limits(self) -> tuple[float, float]:
        cfg = self.cfg
        half = cfg.limit_constant * math.sqrt(2.0 * cfg.p * cfg.omega / (2.0 - cfg.omega))
        return (cfg.p - half, cfg.p + half)

    def step(self, y: np.ndarray) -> ChartOutput:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.cfg.p:
            raise ConfigError(f"observation has {y.shape[0]} components, chart expects {self.cfg.p}")
        outer = np.outer(y, y)
        if self.t == 0:
            # e_0 = y_1 y_1' makes the first plotted value tr(y_1 y_1') for any omega
            self.e = outer
        else:
            w = self.cfg.omega
            self.e = w * outer + (1.0 - w) * self.e
        self.t += 1
        stat = float(np.trace(self.e))
        lcl, ucl = self.limits_at(self.t)
        return ChartOutput(self.t, stat, lcl, ucl, stat > ucl or stat < lcl)

    def reset(self) -> None:
        self.t = 0
        self.e = np.zeros((self.cfg.p, self.cfg.p))

    def snapshot(self) -> dict:
        return _snapshot_dict(self.cfg, self.t, {"e": self.e.tolist()})

    def restore(self, snap: dict) -> None:
        _check_snapshot(self.cfg, snap)
        self.t = int(snap["step"])
        self.e = np.asarray(snap["state"]["e"], dtype=np.float64)


def limit_decay(omega: float, t: int) -> float:
    """Variance decay factor c_t of the smoothed statistic; c_1 is exactly 1."""
    if t == 1:
        return 1.0
    r = 1.0 - omega
    return omega / (2.0 - omega) + (2.0 - 2.0 * omega) / (2.0 - omega) * r ** (2 * (t - 1))


class _WindowChart:
    """Shared machinery for the grouped charts (constant limits)."""

    def __init__(self, cfg: ChartConfig):
        self.cfg = cfg
        self.lcl, self.ucl = cfg.control_limits()
        self.steps = 0

    def _statistic(self, window: SubgroupWindow) -> float:
        raise NotImplementedError

    def step(self, window: SubgroupWindow) -> ChartOutput:
        if window.p != self.cfg.p or window.n != self.cfg.n:
            raise ConfigError(
                f"window shape {window.p}x{window.n} does not match chart config "
                f"p={self.cfg.p}, n={self.cfg.n}"
            )
        self.steps += 1
        stat = self._statistic(window)
        return ChartOutput(window.end_time, stat, self.lcl, self.ucl,
                           stat > self.ucl or stat < self.lcl)

    def reset(self) -> None:
        self.steps = 0

    def snapshot(self) -> dict:
        return _snapshot_dict(self.cfg, self.steps, {})

    def restore(self, snap: dict) -> None:
        _check_snapshot(self.cfg, snap)
        self.steps = int(snap["step"])


class GvcChart(_WindowChart):
    def __init__(self, cfg: ChartConfig):
        if cfg.variant is not ChartVariant.GVC:
            raise ConfigError("GvcChart requires a GVC config")
        super().__init__(cfg)

    def _statistic(self, window: SubgroupWindow) -> float:
        return det_sym(centered_covariance(window))


class TraceCovChart(_WindowChart):
    """Trace-of-covariance chart; serves both subgroup arrangements."""

    def __init__(self, cfg: ChartConfig):
        if cfg.variant not in (ChartVariant.NTCC, ChartVariant.OTCC):
            raise ConfigError("TraceCovChart requires an NTCC or OTCC config")
        super().__init__(cfg)

    def _statistic(self, window: SubgroupWindow) -> float:
        return float(np.trace(centered_covariance(window)))


class MssdChart(_WindowChart):
    def __init__(self, cfg: ChartConfig):
        if cfg.variant is not ChartVariant.OTMC:
            raise ConfigError("MssdChart requires an OTMC config")
        super().__init__(cfg)

    def _statistic(self, window: SubgroupWindow) -> float:
        return float(np.trace(mssd_matrix(window)))


def make_chart(cfg: ChartConfig):
    if cfg.variant is ChartVariant.MEWMS:
        return MewmsChart(cfg)
    if cfg.variant is ChartVariant.GVC:
        return GvcChart(cfg)
    if cfg.variant is ChartVariant.OTMC:
        return MssdChart(cfg)
    return TraceCovChart(cfg)


def monitor_stream(cfg: ChartConfig, observations, model=None) -> list[ChartOutput]:
    """Run a chart over a sequence of Observation records.

    When a ProcessModel is given the observations are standardized first;
    otherwise they are assumed already standardized.
    """
    from .errors import DataError
    from .model import standardize  # local import to avoid a cycle
    from .windows import SubgroupAssembler

    chart = make_chart(cfg)
    out: list[ChartOutput] = []
    if cfg.variant is ChartVariant.MEWMS:
        last_t = None
        for obs in observations:
            if last_t is not None and obs.t <= last_t:
                raise DataError(f"out-of-order observation: time {obs.t} after {last_t}")
            last_t = obs.t
            y = standardize(obs.x, model) if model is not None else obs.x
            out.append(chart.step(y))
        return out
    assembler = SubgroupAssembler(cfg.policy())
    for obs in observations:
        y = standardize(obs.x, model) if model is not None else np.asarray(obs.x, dtype=np.float64)
        window = assembler.push(obs._replace(x=y))
        if window is not None:
            out.append(chart.step(window))
    return out


# --- state snapshots ------------------------------------------------------

SNAPSHOT_VERSION = 1


def _config_dict(cfg: ChartConfig) -> dict:
    return {
        "variant": cfg.variant.value,
        "p": cfg.p,
        "n": cfg.n,
        "omega": cfg.omega,
        "limit_constant": cfg.limit_constant,
        "alpha": cfg.alpha,
        "limits": list(cfg.limits) if cfg.limits is not None else None,
    }


def config_from_dict(d: dict) -> ChartConfig:
    limits = d.get("limits")
    return ChartConfig(
        variant=ChartVariant(d["variant"]),
        p=int(d["p"]),
        n=int(d.get("n", 1)),
        omega=d.get("omega"),
        limit_constant=d.get("limit_constant"),
        alpha=d.get("alpha"),
        limits=tuple(limits) if limits is not None else None,
    )


def _snapshot_dict(cfg: ChartConfig, step: int, state: dict) -> dict:
    return {
        "format_version": SNAPSHOT_VERSION,
        "variant": cfg.variant.value,
        "config": _config_dict(cfg),
        "step": step,
        "state": state,
    }


def _check_snapshot(cfg: ChartConfig, snap: dict) -> None:
    if snap.get("format_version") != SNAPSHOT_VERSION:
        raise ConfigError(f"unsupported snapshot format version {snap.get('format_version')}")
    if config_from_dict(snap["config"]) != cfg:
        raise ConfigError("snapshot config does not match the chart it is being restored into")


def dump_snapshot(chart) -> str:
    """Serialize chart state as JSON text at full float precision."""
    return json.dumps(chart.snapshot(), indent=2)


def load_snapshot(text: str):
    """Rebuild a chart (config + state) from snapshot JSON text."""
    snap = json.loads(text)
    cfg = config_from_dict(snap["config"])
    chart = make_chart(cfg)
    chart.restore(snap)
    return chart


class MonitorSession:
    """Resumable monitoring of one stream: subgroup assembly plus the chart.

    Sessions serialize to JSON (chart state, pending subgroup columns,
    sequencing counters, all floats at full precision), so monitoring can
    be checkpointed between batches of observations.
    """

    def __init__(self, cfg: ChartConfig, model=None):
        from .windows import SubgroupAssembler

        self.cfg = cfg
        self.model = model
        self.chart = make_chart(cfg)
        self._assembler = SubgroupAssembler(cfg.policy())

    def update(self, obs) -> Optional[ChartOutput]:
        from .model import standardize

        y = standardize(obs.x, self.model) if self.model is not None else np.asarray(obs.x, dtype=np.float64)
        if self.cfg.variant is ChartVariant.MEWMS:
            self._assembler.push(obs._replace(x=y))  # sequencing check + time tracking
            return self.chart.step(y)
        window = self._assembler.push(obs._replace(x=y))
        if window is None:
            return None
        return self.chart.step(window)

    def snapshot(self) -> str:
        payload = {
            "format_version": SNAPSHOT_VERSION,
            "chart": self.chart.snapshot(),
            "assembler": self._assembler.get_state(),
        }
        return json.dumps(payload, indent=2)

    def restore(self, text: str) -> None:
        payload = json.loads(text)
        if payload.get("format_version") != SNAPSHOT_VERSION:
            raise ConfigError(f"unsupported session snapshot version {payload.get('format_version')}")
        self.chart.restore(payload["chart"])
        self._assembler.set_state(payload["assembler"])
