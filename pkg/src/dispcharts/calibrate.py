"""Control-constant calibration by stochastic root finding.

Finds the chart constant that achieves a target in-control ATS: the MEWMS
constant L, the GVC constant L_gvc, or -- for the two-sided trace charts --
a single tail probability c mapped to the symmetric pair

    lcl = chi2_{p(n-1), c/2} / (n-1),   ucl = chi2_{p(n-1), 1-c/2} / (n-1).

Every candidate is evaluated with common random numbers (the same master
seed, hence the same replication streams), which makes the ATS-vs-constant
curve monotone path-by-path for the grouped charts and lets plain bisection
converge despite Monte Carlo noise. The individual chart's warm-up
discard/redraw protocol re-pairs a small fraction of paths between
candidates, so its monotonicity check carries a noise allowance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

from .charts import ChartConfig, ChartVariant
from .errors import CalibrationError, ConfigError
from .model import ProcessModel, ShiftScenario
from .numerics import chisq_quantile
from .simulate import AtsEstimate, Convention, StreamSpec, estimate_ats
from .windows import AggregationPolicy

_BRACKET_EXPANSIONS = 24
_MAX_BISECTIONS = 48


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of a constant search.

    constant is the scalar that was searched (L, L_gvc, or the two-sided
    tail probability c); limits carries the implied (lcl, ucl) pair for
    two-sided variants.
    """

    chart: ChartConfig
    constant: float
    limits: Optional[tuple[float, float]]
    achieved_ats: AtsEstimate
    target_ats: float
    tolerance: float
    iterations: int
    bracket_history: tuple[tuple[float, float], ...]

    @property
    def constant_or_limits(self):
        return self.limits if self.limits is not None else self.constant

    def to_dict(self) -> dict:
        return {
            "variant": self.chart.variant.value,
            "p": self.chart.p,
            "n": self.chart.n,
            "omega": self.chart.omega,
            "constant": self.constant,
            "limits": list(self.limits) if self.limits is not None else None,
            "target_ats": self.target_ats,
            "tolerance": self.tolerance,
            "achieved_ats": self.achieved_ats.ats,
            "achieved_stderr": self.achieved_ats.stderr,
            "replications": self.achieved_ats.replications,
            "iterations": self.iterations,
            "bracket_history": [list(pair) for pair in self.bracket_history],
        }

    def report(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def two_sided_limits(p: int, n: int, c: float) -> tuple[float, float]:
    """Symmetric-tail (lcl, ucl) pair for the trace charts' search family."""
    if not 0.0 < c < 1.0:
        raise ConfigError(f"tail probability must lie in (0, 1), got {c}")
    nu = p * (n - 1)
    return (chisq_quantile(nu, c / 2.0) / (n - 1),
            chisq_quantile(nu, 1.0 - c / 2.0) / (n - 1))


def _with_constant(chart: ChartConfig, value: float) -> ChartConfig:
    if chart.variant in (ChartVariant.MEWMS, ChartVariant.GVC):
        return replace(chart, limit_constant=value)
    return replace(chart, alpha=None, limits=two_sided_limits(chart.p, chart.n, value))


def _default_bracket(chart: ChartConfig) -> tuple[float, float, float, float]:
    """(lo, hi, floor, ceiling) of the searched scalar."""
    if chart.variant is ChartVariant.MEWMS:
        return 2.0, 6.0, 1e-6, 64.0
    if chart.variant is ChartVariant.GVC:
        return 0.5, 4.0, 1e-6, 1024.0
    return 1e-3, 0.1, 1e-12, 0.999


def solve_constant(chart: ChartConfig, policy: AggregationPolicy, target_ats: float,
                   tol: Optional[float] = None, reps_per_eval: int = 50000,
                   master_seed: int = 0, bracket_reps: int = 10000,
                   bracket: Optional[tuple[float, float]] = None,
                   warmup: int = 50, threads: int = 1) -> CalibrationResult:
    """Bisection on the chart constant until the in-control ATS hits target.

    Bracketing runs use bracket_reps replications; once the bracket is
    tight the candidate is polished at reps_per_eval. Terminates when the
    polished estimate falls within max(tol, 2 stderr) of target or the
    bracket collapses to floating-point resolution.
    """
    if target_ats <= 1.0:
        raise ConfigError(f"target ATS must exceed 1, got {target_ats}")
    model = ProcessModel.standard(chart.p)
    spec = StreamSpec(model, ShiftScenario.in_control(),
                      max_time=int(50 * target_ats))
    history: list[tuple[float, float]] = []
    evals = 0

    def ats_at(value: float, reps: int) -> AtsEstimate:
        nonlocal evals
        evals += 1
        cfg = _with_constant(chart, value)
        est = estimate_ats(cfg, policy, spec, reps, master_seed,
                           convention=Convention.STEADY_STATE, warmup=warmup,
                           threads=threads)
        history.append((value, est.ats))
        return est

    lo, hi, floor, ceiling = _default_bracket(chart)
    if bracket is not None:
        lo, hi = bracket
    # ats is increasing in L (wider limits) and decreasing in the tail
    # probability c (narrower limits)
    increasing = chart.variant in (ChartVariant.MEWMS, ChartVariant.GVC)

    est_lo = ats_at(lo, bracket_reps)
    est_hi = ats_at(hi, bracket_reps)
    f_lo = est_lo.ats - target_ats
    f_hi = est_hi.ats - target_ats
    if not increasing:
        f_lo, f_hi = -f_lo, -f_hi

    expansions = 0
    while f_lo > 0.0 and expansions < _BRACKET_EXPANSIONS and lo > floor:
        hi, f_hi = lo, f_lo
        lo = max(floor, lo / 2.0)
        e = ats_at(lo, bracket_reps)
        f_lo = (e.ats - target_ats) * (1.0 if increasing else -1.0)
        expansions += 1
    while f_hi < 0.0 and expansions < _BRACKET_EXPANSIONS and hi < ceiling:
        lo, f_lo = hi, f_hi
        hi = min(ceiling, hi * 2.0)
        e = ats_at(hi, bracket_reps)
        f_hi = (e.ats - target_ats) * (1.0 if increasing else -1.0)
        expansions += 1
    if f_lo > 0.0 or f_hi < 0.0:
        raise CalibrationError(
            f"could not bracket target ATS {target_ats} for {chart.variant.value}: "
            f"tried constants down to {lo:.6g} and up to {hi:.6g}; "
            f"evaluations so far: {history}"
        )

    iterations = 0
    best: Optional[tuple[float, AtsEstimate]] = None
    while iterations < _MAX_BISECTIONS:
        iterations += 1
        mid = 0.5 * (lo + hi)
        if (hi - lo) <= 1e-10 * max(1.0, abs(hi)):
            est = ats_at(mid, reps_per_eval)
            best = (mid, est)
            break
        est = ats_at(mid, bracket_reps)
        tol_eff = max(tol if tol is not None else 1.0, 2.0 * est.stderr)
        if abs(est.ats - target_ats) <= tol_eff:
            if bracket_reps >= reps_per_eval:
                best = (mid, est)
                break
            polished = ats_at(mid, reps_per_eval)
            tol_pol = max(tol if tol is not None else 1.0, 2.0 * polished.stderr)
            if abs(polished.ats - target_ats) <= tol_pol:
                best = (mid, polished)
                break
            est = polished  # polished estimate disagrees: keep bisecting on it
        f_mid = (est.ats - target_ats) * (1.0 if increasing else -1.0)
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    if best is None:
        mid = 0.5 * (lo + hi)
        best = (mid, ats_at(mid, reps_per_eval))

    _check_monotone(chart, history, target_ats, increasing)

    value, achieved = best
    tol_final = max(tol if tol is not None else 1.0, 2.0 * achieved.stderr)
    limits = None if increasing else two_sided_limits(chart.p, chart.n, value)
    return CalibrationResult(
        chart=chart, constant=value, limits=limits, achieved_ats=achieved,
        target_ats=target_ats, tolerance=tol_final, iterations=iterations,
        bracket_history=tuple(history),
    )


def _check_monotone(chart: ChartConfig, history: list[tuple[float, float]],
                    target: float, increasing: bool) -> None:
    """Abort when CRN evaluations contradict the required monotone direction.

    Grouped-chart evaluations are path-coupled, so violations there are
    real; the individual chart's warm-up redraws add a little independent
    noise, covered by the slack term.
    """
    slack = 0.02 * target if chart.variant is ChartVariant.MEWMS else 1e-9
    pts = sorted(history)
    for (c1, a1), (c2, a2) in zip(pts, pts[1:]):
        if c2 <= c1:
            continue
        diff = (a2 - a1) if increasing else (a1 - a2)
        if diff < -slack:
            raise CalibrationError(
                f"ATS is not monotone in the searched constant under common random numbers: "
                f"ats({c1:.8g})={a1:.2f} vs ats({c2:.8g})={a2:.2f}; "
                f"full history: {pts}"
            )
