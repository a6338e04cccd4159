"""Reproduction of the published experiment grids and the case study.

An ExperimentManifest names a grid of (rho, delta) scenario cells times a
set of chart columns; ``reproduce`` estimates steady-state ATS for every
cell and writes a CSV mirroring the published table layout, with a
standard-error and censored-count column per chart and values above the
reporting cap rendered as "*". Built-in manifests cover the four ATS
tables (chart comparison at fixed n) and the two figure grids (subgroup
size sweeps).

``case_study`` runs the end-to-end pipeline: Phase I estimation from a
historical CSV, a simulated Phase II stream with an in-control segment, a
variance increase, and a variance decrease, and all six reference chart
configurations monitoring it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .charts import ChartConfig, ChartVariant, default_config, monitor_stream
from .errors import ConfigError, DataError
from .model import (
    Observation,
    ProcessModel,
    ShiftKind,
    ShiftScenario,
    phase1_estimate,
)
from .numerics import RngStream, cholesky
from .simulate import AtsEstimate, Convention, StreamSpec, estimate_ats

#: table values above this render as "*" (the published reporting cap)
ATS_DISPLAY_CAP = 10000.0

#: default simulation horizon for table reproduction; anything censored
#: here is far beyond the display cap anyway
DEFAULT_TABLE_MAX_TIME = 20000

DEFAULT_REPLICATIONS = 10000
DEFAULT_MASTER_SEED = 20190618

_TABLE_DELTAS = (0.6, 0.7, 0.8, 0.9, 1.0, 1.2, 1.4, 1.6, 2.0, 2.5, 3.5, 4.0)
_FIG_DELTAS = (0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 2.0, 2.5, 3.0, 3.5, 4.0)
_COMPARISON_CHARTS = ("otcc", "otmc", "ntcc", "gvc", "mewms:0.2", "mewms:0.9")
_GROUPED_CHARTS = ("gvc", "ntcc", "otcc", "otmc")


@dataclass(frozen=True)
class ExperimentManifest:
    experiment: str
    p: int
    charts: tuple[str, ...]
    shift_kind: ShiftKind
    rhos: tuple[float, ...]
    deltas: tuple[float, ...]
    n: Optional[int] = None            # fixed subgroup size (table experiments)
    subgroup_sizes: tuple[int, ...] = ()  # swept sizes (figure experiments)
    q: Optional[int] = None
    replications: int = DEFAULT_REPLICATIONS
    master_seed: int = DEFAULT_MASTER_SEED
    max_time: int = DEFAULT_TABLE_MAX_TIME

    def __post_init__(self):
        if not self.charts:
            raise ConfigError("manifest needs at least one chart column")
        if self.n is None and not self.subgroup_sizes:
            raise ConfigError("manifest needs a subgroup size n or a subgroup_sizes sweep")
        if self.shift_kind is ShiftKind.PARTIAL and self.q is None:
            raise ConfigError("partial-shift manifests need q")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "p": self.p,
            "n": self.n,
            "subgroup_sizes": list(self.subgroup_sizes),
            "charts": list(self.charts),
            "shift_kind": self.shift_kind.value,
            "q": self.q,
            "rhos": list(self.rhos),
            "deltas": list(self.deltas),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "max_time": self.max_time,
        }


def manifest_from_dict(d: dict) -> ExperimentManifest:
    return ExperimentManifest(
        experiment=str(d["experiment"]),
        p=int(d["p"]),
        n=d.get("n"),
        subgroup_sizes=tuple(int(v) for v in d.get("subgroup_sizes", ())),
        charts=tuple(d["charts"]),
        shift_kind=ShiftKind(d.get("shift_kind", "overall_corr")),
        q=d.get("q"),
        rhos=tuple(float(v) for v in d["rhos"]),
        deltas=tuple(float(v) for v in d["deltas"]),
        replications=int(d.get("replications", DEFAULT_REPLICATIONS)),
        master_seed=int(d.get("master_seed", DEFAULT_MASTER_SEED)),
        max_time=int(d.get("max_time", DEFAULT_TABLE_MAX_TIME)),
    )


def load_manifest(path) -> ExperimentManifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    return manifest_from_dict(payload)


def builtin_manifest(experiment: str, **overrides) -> ExperimentManifest:
    """Manifests for the shipped experiments (table8/9/10/11, fig1, fig2)."""
    base = {
        "table8": dict(p=2, n=10, charts=_COMPARISON_CHARTS, shift_kind=ShiftKind.OVERALL_CORR,
                       rhos=(0.0, 0.2, 0.6, 0.8), deltas=_TABLE_DELTAS),
        "table9": dict(p=2, n=10, charts=_COMPARISON_CHARTS, shift_kind=ShiftKind.PARTIAL, q=1,
                       rhos=(0.0, 0.2, 0.6, 0.8), deltas=_TABLE_DELTAS),
        "table10": dict(p=10, n=11, charts=_COMPARISON_CHARTS, shift_kind=ShiftKind.OVERALL_CORR,
                        rhos=(0.0, 0.6), deltas=_TABLE_DELTAS),
        "table11": dict(p=10, n=11, charts=_COMPARISON_CHARTS, shift_kind=ShiftKind.PARTIAL, q=3,
                        rhos=(0.0, 0.6), deltas=_TABLE_DELTAS),
        "fig1": dict(p=2, subgroup_sizes=(3, 5, 10), charts=_GROUPED_CHARTS,
                     shift_kind=ShiftKind.OVERALL, rhos=(0.0,), deltas=_FIG_DELTAS),
        "fig1b": dict(p=10, subgroup_sizes=(11, 15, 20), charts=_GROUPED_CHARTS,
                      shift_kind=ShiftKind.OVERALL, rhos=(0.0,), deltas=_FIG_DELTAS),
        "fig2": dict(p=2, subgroup_sizes=(3, 5, 10), charts=_GROUPED_CHARTS,
                     shift_kind=ShiftKind.OVERALL_CORR, rhos=(0.6,), deltas=_FIG_DELTAS),
        "fig2b": dict(p=10, subgroup_sizes=(11, 15, 20), charts=_GROUPED_CHARTS,
                      shift_kind=ShiftKind.OVERALL_CORR, rhos=(0.6,), deltas=_FIG_DELTAS),
    }
    if experiment not in base:
        raise ConfigError(f"unknown built-in experiment {experiment!r}; "
                          f"available: {sorted(base)}")
    kwargs = dict(base[experiment])
    kwargs.update(overrides)
    return ExperimentManifest(experiment=experiment, **kwargs)


def _parse_chart_token(token: str, p: int, n: Optional[int]) -> ChartConfig:
    name, _, arg = token.partition(":")
    name = name.strip().lower()
    if name == "mewms":
        if not arg:
            raise ConfigError(f"chart token {token!r} needs a smoothing value, e.g. mewms:0.2")
        return default_config(ChartVariant.MEWMS, p, omega=float(arg))
    return default_config(ChartVariant(name), p, n=n)


def _cell_seed(master_seed: int, experiment: str, chart: str, n: int,
               rho: float, delta: float) -> int:
    key = f"{master_seed}|{experiment}|{chart}|n={n}|rho={rho!r}|delta={delta!r}"
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _format_ats(est: AtsEstimate) -> str:
    if est.ats > ATS_DISPLAY_CAP:
        return "*"
    return f"{est.ats:.4f}"


@dataclass(frozen=True)
class CellResult:
    chart: str
    n: int
    rho: float
    delta: float
    estimate: AtsEstimate


def reproduce(manifest: ExperimentManifest, out_path=None) -> str:
    """Run every grid cell and return the result table as CSV text.

    Cell seeds derive from (master_seed, experiment, chart, n, rho, delta),
    so any slice of the grid reproduces identically regardless of which
    other cells run. The CSV is byte-identical for identical manifests.
    """
    sizes = manifest.subgroup_sizes or (manifest.n,)
    sweep = bool(manifest.subgroup_sizes)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if sweep:
        writer.writerow(["chart", "p", "n", "rho", "delta", "ats", "stderr", "censored"])
    else:
        header = ["rho", "delta"]
        for token in manifest.charts:
            col = token.replace(":", "_w").replace(".", "")
            header += [f"{col}_ats", f"{col}_stderr", f"{col}_censored"]
        writer.writerow(header)

    model = ProcessModel.standard(manifest.p)
    for rho in manifest.rhos:
        for delta in manifest.deltas:
            scenario = ShiftScenario(kind=manifest.shift_kind, delta=delta, rho=rho,
                                     q=manifest.q, tau=1)
            spec = StreamSpec(model, scenario, max_time=manifest.max_time)
            row_cells: list[CellResult] = []
            for n in sizes:
                for token in manifest.charts:
                    cfg = _parse_chart_token(token, manifest.p, n)
                    seed = _cell_seed(manifest.master_seed, manifest.experiment,
                                      token, n, rho, delta)
                    est = estimate_ats(cfg, cfg.policy(), spec, manifest.replications,
                                       seed, convention=Convention.STEADY_STATE)
                    row_cells.append(CellResult(token, n, rho, delta, est))
            if sweep:
                for cell in row_cells:
                    writer.writerow([cell.chart, manifest.p, cell.n, f"{rho:g}", f"{delta:g}",
                                     _format_ats(cell.estimate),
                                     f"{cell.estimate.stderr:.4f}",
                                     cell.estimate.censored_count])
            else:
                row = [f"{rho:g}", f"{delta:g}"]
                for cell in row_cells:
                    row += [_format_ats(cell.estimate), f"{cell.estimate.stderr:.4f}",
                            cell.estimate.censored_count]
                writer.writerow(row)

    text = buf.getvalue()
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    return text


# --- case study -------------------------------------------------------------

CASE_STUDY_SEGMENTS = ((50, 1.0), (30, 2.5), (20, 0.5))
CASE_STUDY_N = 5

_CASE_CHARTS = ("mewms:0.2", "mewms:0.9", "gvc", "ntcc", "otcc", "otmc")


def packaged_phase1_path():
    """Path to the shipped Phase I data (synthetic, matching the published moments)."""
    return resources.files("dispcharts").joinpath("data/indust_phase1.csv")


def load_phase1_csv(path=None) -> np.ndarray:
    """Read a Phase I CSV (header t,x1,..,xp or x1,..,xp) into an (m, p) array."""
    from .cli import read_data_csv  # shared CSV reader, local import to avoid a cycle

    if path is None:
        with resources.as_file(packaged_phase1_path()) as p:
            return read_data_csv(p)[1]
    return read_data_csv(path)[1]


@dataclass(frozen=True)
class CaseStudyChartSummary:
    chart: str
    signals: tuple[int, ...]
    increase_delay: Optional[int]   # ticks past the variance increase until an upper signal
    decrease_detected: bool         # any lower signal during the decrease segment


@dataclass(frozen=True)
class CaseStudyResult:
    model: ProcessModel
    data: np.ndarray
    changepoints: tuple[int, int]
    summaries: dict[str, CaseStudyChartSummary] = field(repr=False)


def simulate_case_stream(model: ProcessModel, rng: RngStream,
                         segments=CASE_STUDY_SEGMENTS) -> np.ndarray:
    """Phase II stream: in-control, then variance x delta per segment."""
    gen = rng.generator()
    lower = cholesky(model.sigma0)
    parts = []
    for length, delta in segments:
        z = gen.standard_normal((length, model.p))
        parts.append(model.mu0 + np.sqrt(delta) * (z @ lower.T))
    return np.vstack(parts)


def case_study(seed: int, phase1_path=None, out_dir=None,
               segments=CASE_STUDY_SEGMENTS, n: int = CASE_STUDY_N) -> CaseStudyResult:
    """Phase I estimation, Phase II simulation, all six reference charts.

    Detection is counted directionally: an upper signal inside the
    variance-increase segment, a lower signal inside the decrease segment
    (the smoothed individual chart's lower limit is negative, so it cannot
    flag decreases; that asymmetry is the point of the comparison).
    """
    data = load_phase1_csv(phase1_path)
    model = phase1_estimate(data)

    stream = simulate_case_stream(model, RngStream(seed), segments)
    observations = [Observation(i + 1, stream[i]) for i in range(stream.shape[0])]
    inc_start = segments[0][0] + 1
    dec_start = segments[0][0] + segments[1][0] + 1
    t_end = sum(s[0] for s in segments)

    summaries: dict[str, CaseStudyChartSummary] = {}
    chart_outputs = {}
    for token in _CASE_CHARTS:
        cfg = _parse_chart_token(token, model.p, n)
        outs = monitor_stream(cfg, observations, model=model)
        chart_outputs[token] = outs
        signals = tuple(o.time for o in outs if o.signal)
        upper = [o.time for o in outs
                 if o.statistic > o.ucl and inc_start <= o.time < dec_start]
        lower = [o.time for o in outs
                 if o.statistic < o.lcl and dec_start <= o.time <= t_end]
        summaries[token] = CaseStudyChartSummary(
            chart=token,
            signals=signals,
            increase_delay=(upper[0] - inc_start + 1) if upper else None,
            decrease_detected=bool(lower),
        )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "phase2_data.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(model.p)] + ["segment"])
            seg_of = []
            for idx, (length, _) in enumerate(segments):
                seg_of += [idx] * length
            for i in range(stream.shape[0]):
                w.writerow([i + 1] + [repr(float(v)) for v in stream[i]] + [seg_of[i]])
        for token, outs in chart_outputs.items():
            fname = token.replace(":", "_w").replace(".", "") + ".csv"
            with open(out / fname, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "statistic", "lcl", "ucl", "signal"])
                for o in outs:
                    w.writerow([o.time, repr(o.statistic), repr(o.lcl), repr(o.ucl),
                                int(o.signal)])
        summary_payload = {
            "seed": seed,
            "n": n,
            "segments": [[length, delta] for length, delta in segments],
            "phase1_mean": [repr(float(v)) for v in model.mu0],
            "phase1_cov": [[repr(float(v)) for v in row] for row in model.sigma0],
            "charts": {
                token: {
                    "signals": list(s.signals),
                    "increase_delay": s.increase_delay,
                    "decrease_detected": s.decrease_detected,
                }
                for token, s in summaries.items()
            },
        }
        (out / "summary.json").write_text(json.dumps(summary_payload, indent=2) + "\n",
                                          encoding="utf-8")

    return CaseStudyResult(model=model, data=stream,
                           changepoints=(inc_start, dec_start), summaries=summaries)
