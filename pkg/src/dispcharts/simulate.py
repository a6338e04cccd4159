"""Monte Carlo run-length simulation and ATS estimation.

Each replication owns an independent keyed random stream (master_seed,
replication index), is simulated in growing time blocks with the chart
statistic evaluated vectorized over the block, and reports the tick of its
first signal. Aggregation sums integer tick counts, so estimates are
bit-identical for any thread count.

Conventions:

* zero state -- the covariance shift is active from t=1; the reported
  time is the tick of the first signal.
* steady state, in-control scenario -- there is no changepoint, so the
  estimate is the expected time to a false alarm: plain first-signal
  ticks for grouped charts, and the warm-up/discard protocol for the
  individual chart (measure ticks past the warm-up, redraw runs that
  signal during it).
* steady state, shifted scenario -- the shift begins at a random moment
  while the chart is already running. The default protocol
  (``steady_mode="simulate"``) warms the chart up in control, places the
  changepoint uniformly within a subgroup, discards runs that false-alarm
  before it, and measures the delay past the changepoint. The individual
  chart adds the half-interval phase term n/2 = 0.5 for the sub-tick
  position of the changepoint. ``steady_mode="additive"`` instead applies
  the flat +n/2 correction to the zero-state estimate; it is cheaper but
  ignores the diluted windows that straddle the changepoint, so it
  overstates detection delay by several percent for grouped charts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter

from .charts import ChartConfig, ChartVariant, limit_decay
from .errors import ConfigError
from .model import Observation, ProcessModel, ShiftScenario, build_covariance, is_shifted
from .numerics import RngStream, cholesky
from .windows import AggregationMode, AggregationPolicy

DEFAULT_WARMUP = 50
DEFAULT_MAX_TIME = 1_000_000
CENSOR_WARN_FRACTION = 0.001
_MAX_WARMUP_REDRAWS = 1000
_BLOCK_INITIAL = 512
_BLOCK_MAX = 8192


class Convention(str, Enum):
    ZERO_STATE = "zero"
    STEADY_STATE = "steady"


@dataclass(frozen=True)
class StreamSpec:
    model: ProcessModel
    scenario: ShiftScenario
    max_time: int = DEFAULT_MAX_TIME

    def __post_init__(self):
        if self.max_time < 1:
            raise ConfigError(f"max_time must be >= 1, got {self.max_time}")


@dataclass(frozen=True)
class AtsEstimate:
    ats: float
    stderr: float
    replications: int
    convention: Convention
    censored_count: int = 0

    @property
    def censor_warning(self) -> bool:
        return self.censored_count > CENSOR_WARN_FRACTION * self.replications


@dataclass(frozen=True)
class RunResult:
    """One replication's time to signal, in observation ticks since tau."""

    ticks: int
    censored: bool
    warmup_redraws: int = 0


# --- observation sampling -------------------------------------------------


class _StandardizedSampler:
    """Block sampler for one replication's standardized observation stream.

    Draws z ~ N(0, I) sequentially from the replication's generator and
    maps rows at or after the changepoint through the shifted transform.
    The draw order depends only on the block schedule, never on the chart,
    so a given stream always produces the same data.
    """

    def __init__(self, p: int, gen: np.random.Generator,
                 pre: Optional[np.ndarray], post: Optional[np.ndarray]):
        self.p = p
        self.gen = gen
        self.pre_t = pre.T.copy() if pre is not None else None
        self.post_t = post.T.copy() if post is not None else None

    def block(self, t0: int, size: int, tau: Optional[int]) -> np.ndarray:
        """Rows for global times t0+1 .. t0+size."""
        z = self.gen.standard_normal((size, self.p))
        if tau is None:
            if self.pre_t is not None:
                z = z @ self.pre_t
            return z
        split = max(0, min(size, tau - 1 - t0))
        if split == 0:
            return z @ self.post_t if self.post_t is not None else z
        out = z
        if self.pre_t is not None:
            out = np.empty_like(z)
            out[:split] = z[:split] @ self.pre_t
        if self.post_t is not None:
            if out is z:
                out = z.copy()
            out[split:] = z[split:] @ self.post_t
        return out


def _transforms(model: ProcessModel, scenario: ShiftScenario):
    """(pre, post) standardized-space transforms; None means identity."""
    isq = model.inv_sqrt_sigma0()
    pre = isq @ cholesky(model.sigma0)
    if np.allclose(pre, np.eye(model.p), rtol=0.0, atol=1e-12):
        pre = None
    post = isq @ cholesky(build_covariance(model, scenario))
    if np.allclose(post, np.eye(model.p), rtol=0.0, atol=1e-12):
        post = None
    return pre, post


def gen_stream(spec: StreamSpec, rng: RngStream, length: Optional[int] = None) -> list[Observation]:
    """Materialize a raw observation stream for the spec's scenario.

    Observations before tau are N(mu0, sigma0); from tau on they follow
    the shifted covariance. Sampling is Cholesky factor times standard
    normals, fully determined by the stream key.
    """
    t_end = spec.max_time if length is None else length
    model, scenario = spec.model, spec.scenario
    l0 = cholesky(model.sigma0)
    ls = cholesky(build_covariance(model, scenario))
    z = rng.generator().standard_normal((t_end, model.p))
    x = np.empty_like(z)
    tau = scenario.tau
    split = t_end if tau is None else max(0, min(t_end, tau - 1))
    x[:split] = z[:split] @ l0.T
    x[split:] = z[split:] @ ls.T
    x += model.mu0
    return [Observation(t + 1, x[t]) for t in range(t_end)]


# --- per-replication kernels ----------------------------------------------


def _block_sizes(t0: int, limit: int, align: int = 1):
    size = _BLOCK_INITIAL
    while t0 < limit:
        b = min(size, limit - t0)
        if align > 1:
            b = (b // align) * align
            if b == 0:
                return
        yield t0, b
        t0 += b
        size = min(size * 2, _BLOCK_MAX)


class _MewmsLimitCache:
    """Per-config cache of (lcl, ucl) arrays for each block of time indices."""

    def __init__(self, cfg: ChartConfig):
        self.cfg = cfg
        self._cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def limits(self, t0: int, size: int) -> tuple[np.ndarray, np.ndarray]:
        key = (t0, size)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        cfg = self.cfg
        t = np.arange(t0 + 1, t0 + size + 1, dtype=np.float64)
        r = 1.0 - cfg.omega
        with np.errstate(under="ignore"):
            decay = np.exp((2.0 * (t - 1.0)) * math.log(r))
        c = cfg.omega / (2.0 - cfg.omega) + (2.0 - 2.0 * cfg.omega) / (2.0 - cfg.omega) * decay
        c[t == 1.0] = 1.0
        half = cfg.limit_constant * np.sqrt(2.0 * cfg.p * c)
        pair = (cfg.p - half, cfg.p + half)
        self._cache[key] = pair
        return pair


def _run_mewms(cfg: ChartConfig, sampler: _StandardizedSampler, tau: Optional[int],
               warmup_guard: int, max_time: int, cache: _MewmsLimitCache) -> RunResult:
    omega = cfg.omega
    b_coef = np.array([omega])
    a_coef = np.array([1.0, -(1.0 - omega)])
    redraws = 0
    while True:
        tr_prev: Optional[float] = None
        discarded = False
        for t0, size in _block_sizes(0, max_time):
            y = sampler.block(t0, size, tau)
            q = np.einsum("ij,ij->i", y, y)
            if tr_prev is None:
                tr = np.empty(size)
                tr[0] = q[0]
                if size > 1:
                    tr[1:] = lfilter(b_coef, a_coef, q[1:], zi=np.array([(1.0 - omega) * q[0]]))[0]
            else:
                tr = lfilter(b_coef, a_coef, q, zi=np.array([(1.0 - omega) * tr_prev]))[0]
            lcl, ucl = cache.limits(t0, size)
            sig = (tr > ucl) | (tr < lcl)
            if sig.any():
                t_sig = t0 + int(np.argmax(sig)) + 1
                if t_sig <= warmup_guard:
                    discarded = True
                    break
                return RunResult(t_sig, censored=False, warmup_redraws=redraws)
            tr_prev = float(tr[-1])
        if not discarded:
            return RunResult(max_time, censored=True, warmup_redraws=redraws)
        redraws += 1
        if redraws >= _MAX_WARMUP_REDRAWS:
            # limits so tight that the chart cannot survive the warm-up;
            # report an immediate signal so calibration treats this
            # candidate as far below the target
            return RunResult(max(warmup_guard + 1, 1), censored=False, warmup_redraws=redraws)


def _run_blocked_trace(cfg: ChartConfig, sampler, tau, max_time: int,
                       lcl: float, ucl: float) -> RunResult:
    n, p = cfg.n, cfg.p
    for t0, size in _block_sizes(0, max_time, align=n):
        y = sampler.block(t0, size, tau)
        w = y.reshape(-1, n, p)
        q = np.einsum("wij,wij->w", w, w)
        mu = w.mean(axis=1)
        tr = (q - n * np.einsum("wj,wj->w", mu, mu)) / (n - 1)
        sig = (tr > ucl) | (tr < lcl)
        if sig.any():
            return RunResult(t0 + (int(np.argmax(sig)) + 1) * n, censored=False)
    return RunResult(max_time, censored=True)


def _run_blocked_det(cfg: ChartConfig, sampler, tau, max_time: int,
                     lcl: float, ucl: float) -> RunResult:
    n, p = cfg.n, cfg.p
    for t0, size in _block_sizes(0, max_time, align=n):
        y = sampler.block(t0, size, tau)
        w = y.reshape(-1, n, p)
        c = w - w.mean(axis=1, keepdims=True)
        s = np.einsum("wni,wnj->wij", c, c) / (n - 1)
        dets = np.linalg.det(s)
        sig = (dets > ucl) | (dets < lcl)
        if sig.any():
            return RunResult(t0 + (int(np.argmax(sig)) + 1) * n, censored=False)
    return RunResult(max_time, censored=True)


def _run_sliding_trace(cfg: ChartConfig, sampler, tau, max_time: int,
                       lcl: float, ucl: float) -> RunResult:
    n, p = cfg.n, cfg.p
    tail = np.empty((0, p))
    for t0, size in _block_sizes(0, max_time):
        y = sampler.block(t0, size, tau)
        z = np.concatenate([tail, y]) if tail.shape[0] else y
        m = z.shape[0]
        if m < n:
            tail = z
            continue
        cs = np.vstack([np.zeros((1, p)), np.cumsum(z, axis=0)])
        cq = np.concatenate([[0.0], np.cumsum(np.einsum("ij,ij->i", z, z))])
        sv = cs[n:] - cs[:-n]
        sq = cq[n:] - cq[:-n]
        tr = (sq - np.einsum("ij,ij->i", sv, sv) / n) / (n - 1)
        sig = (tr > ucl) | (tr < lcl)
        if sig.any():
            first_end = t0 - tail.shape[0] + n
            return RunResult(first_end + int(np.argmax(sig)), censored=False)
        tail = z[-(n - 1):]
    return RunResult(max_time, censored=True)


def _run_sliding_mssd(cfg: ChartConfig, sampler, tau, max_time: int,
                      lcl: float, ucl: float) -> RunResult:
    n, p = cfg.n, cfg.p
    scale = 2.0 * (n - 1)
    y_last: Optional[np.ndarray] = None
    d_tail = np.empty(0)
    for t0, size in _block_sizes(0, max_time):
        y = sampler.block(t0, size, tau)
        if y_last is None:
            diffs = y[1:] - y[:-1]
        else:
            diffs = np.diff(np.vstack([y_last[None, :], y]), axis=0)
        d_new = np.einsum("ij,ij->i", diffs, diffs)
        # diff at index i of d has global time first_d + i
        first_d = 2 if y_last is None else t0 + 1 - d_tail.shape[0]
        if y_last is not None:
            d = np.concatenate([d_tail, d_new])
        else:
            d = d_new
        y_last = y[-1]
        md = d.shape[0]
        if md < n - 1:
            d_tail = d
            continue
        cd = np.concatenate([[0.0], np.cumsum(d)])
        sums = cd[n - 1:] - cd[:-(n - 1)]
        # sums[k] covers diff times first_d+k .. first_d+k+n-2, i.e. the
        # window ending at t = first_d + k + n - 2
        tr = sums / scale
        sig = (tr > ucl) | (tr < lcl)
        if sig.any():
            return RunResult(first_d + int(np.argmax(sig)) + n - 2, censored=False)
        d_tail = d[md - (n - 2):] if n > 2 else np.empty(0)
    return RunResult(max_time, censored=True)


_GROUPED_KERNELS: dict[ChartVariant, Callable] = {
    ChartVariant.NTCC: _run_blocked_trace,
    ChartVariant.GVC: _run_blocked_det,
    ChartVariant.OTCC: _run_sliding_trace,
    ChartVariant.OTMC: _run_sliding_mssd,
}

_EXPECTED_MODE = {
    ChartVariant.MEWMS: AggregationMode.INDIVIDUAL,
    ChartVariant.GVC: AggregationMode.NON_OVERLAPPING,
    ChartVariant.NTCC: AggregationMode.NON_OVERLAPPING,
    ChartVariant.OTCC: AggregationMode.OVERLAPPING,
    ChartVariant.OTMC: AggregationMode.OVERLAPPING,
}


def check_compatible(chart: ChartConfig, policy: AggregationPolicy) -> None:
    expected = _EXPECTED_MODE[chart.variant]
    if policy.mode is not expected:
        raise ConfigError(
            f"{chart.variant.value} requires {expected.value} aggregation, got {policy.mode.value}"
        )
    if policy.n != chart.n:
        raise ConfigError(f"policy subgroup size {policy.n} does not match chart n={chart.n}")


def run_length(chart: ChartConfig, policy: AggregationPolicy, spec: StreamSpec,
               rng: RngStream, convention: Convention = Convention.ZERO_STATE,
               warmup: int = DEFAULT_WARMUP,
               steady_mode: str = "simulate") -> RunResult:
    """Time to first signal for a single replication.

    Zero state simulates the shift from t=1 and returns the signal tick.
    Steady state for the individual chart applies the warm-up/redraw
    protocol and returns the delay past the changepoint (a signal at the
    changepoint itself counts as 1). Steady state for grouped charts
    warms the chart up on in-control data, places the changepoint at a
    random phase within a subgroup, and measures the same delay; with
    steady_mode="additive" it instead returns the zero-state tick and
    estimate_ats applies the flat +n/2 correction.
    """
    check_compatible(chart, policy)
    if spec.model.p != chart.p:
        raise ConfigError(f"model dimension {spec.model.p} does not match chart p={chart.p}")
    pre, post = _transforms(spec.model, spec.scenario)
    gen = rng.generator()
    sampler = _StandardizedSampler(chart.p, gen, pre, post)

    if chart.variant is ChartVariant.MEWMS:
        cache = _MewmsLimitCache(chart)
        if convention is Convention.STEADY_STATE:
            if spec.max_time <= warmup:
                raise ConfigError(f"max_time {spec.max_time} must exceed the warm-up length {warmup}")
            res = _run_mewms(chart, sampler, tau=warmup + 1, warmup_guard=warmup,
                             max_time=spec.max_time, cache=cache)
            return RunResult(res.ticks - warmup, res.censored, res.warmup_redraws)
        return _run_mewms(chart, sampler, tau=1, warmup_guard=0,
                          max_time=spec.max_time, cache=cache)

    kernel = _GROUPED_KERNELS[chart.variant]
    lcl, ucl = chart.control_limits()
    if convention is Convention.STEADY_STATE and steady_mode == "simulate":
        # genuine random-phase protocol: the changepoint lands uniformly
        # within a subgroup; runs that false-alarm before it are redrawn
        offset = int(gen.integers(chart.n))
        tau = warmup + 1 + offset
        if spec.max_time <= tau:
            raise ConfigError(f"max_time {spec.max_time} must exceed warm-up plus subgroup phase {tau}")
        attempts = 0
        res = kernel(chart, sampler, tau, spec.max_time, lcl, ucl)
        while res.ticks < tau and not res.censored and attempts < _MAX_WARMUP_REDRAWS:
            attempts += 1
            res = kernel(chart, sampler, tau, spec.max_time, lcl, ucl)
        return RunResult(max(res.ticks - tau + 1, 1), res.censored, attempts)
    return kernel(chart, sampler, tau=1, max_time=spec.max_time, lcl=lcl, ucl=ucl)


def convert_ats(arl: float, policy: AggregationPolicy,
                convention: Convention = Convention.ZERO_STATE) -> float:
    """Average time to signal implied by an average run length in plotted points."""
    if arl < 1.0:
        raise ConfigError(f"average run length must be >= 1, got {arl}")
    if policy.mode is AggregationMode.INDIVIDUAL:
        ats = arl
    elif policy.mode is AggregationMode.NON_OVERLAPPING:
        ats = policy.n * arl
    else:
        ats = arl + policy.n - 1
    if convention is Convention.STEADY_STATE:
        ats += policy.n / 2.0
    return ats


def steady_state_ats(zero_state_ats: float, n: int) -> float:
    """Additive random-phase correction from zero-state to steady-state ATS."""
    return zero_state_ats + n / 2.0


def estimate_ats(chart: ChartConfig, policy: AggregationPolicy, spec: StreamSpec,
                 replications: int, master_seed: int,
                 convention: Convention = Convention.STEADY_STATE,
                 threads: int = 1, warmup: int = DEFAULT_WARMUP,
                 steady_mode: str = "simulate") -> AtsEstimate:
    """Monte Carlo ATS over independent replications.

    Replication k draws from stream (master_seed, k). Tick counts are
    aggregated as exact integer sums in replication order, so the result
    is identical for any thread count.
    """
    if replications < 2:
        raise ConfigError(f"need at least 2 replications, got {replications}")
    if steady_mode not in ("simulate", "additive"):
        raise ConfigError(f"steady_mode must be 'simulate' or 'additive', got {steady_mode!r}")
    check_compatible(chart, policy)

    shifted = is_shifted(spec.model, spec.scenario)
    grouped = chart.variant is not ChartVariant.MEWMS
    sim_convention = Convention.ZERO_STATE
    phase = 0.0
    if convention is Convention.STEADY_STATE:
        if not grouped:
            # warm-up/discard protocol; half-interval phase term when a
            # changepoint exists
            sim_convention = Convention.STEADY_STATE
            phase = 0.5 if shifted else 0.0
        elif shifted:
            if steady_mode == "simulate":
                sim_convention = Convention.STEADY_STATE
            else:
                phase = chart.n / 2.0
        # grouped in-control: the expected time to a false alarm is
        # measured from the start of monitoring (no changepoint to phase)

    def run_chunk(lo: int, hi: int) -> tuple[int, int, int]:
        total = 0
        total_sq = 0
        censored = 0
        for k in range(lo, hi):
            res = run_length(chart, policy, spec, RngStream(master_seed, k),
                             convention=sim_convention, warmup=warmup, steady_mode=steady_mode)
            t = res.ticks
            total += t
            total_sq += t * t
            censored += res.censored
        return total, total_sq, censored

    if threads <= 1:
        parts = [run_chunk(0, replications)]
    else:
        chunk = max(1, -(-replications // threads))
        bounds = [(lo, min(lo + chunk, replications)) for lo in range(0, replications, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: run_chunk(*b), bounds))

    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    censored = sum(p[2] for p in parts)

    mean = total / replications + phase
    var = max(0.0, (total_sq - total * total / replications) / (replications - 1))
    stderr = math.sqrt(var / replications)
    return AtsEstimate(ats=mean, stderr=stderr, replications=replications,
                       convention=convention, censored_count=censored)
