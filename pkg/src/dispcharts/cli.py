"""Command-line interface.

Subcommands:

* phase1     -- estimate an in-control model from a historical CSV
* ats        -- Monte Carlo average time to signal for one chart/scenario
* calibrate  -- search a chart constant for a target in-control ATS
* reproduce  -- run an experiment manifest and write the result table CSV
* monitor    -- run one chart over a data CSV, writing per-time output rows
* casestudy  -- the end-to-end Phase I / Phase II example

Every run logs its fully resolved configuration (derived limits included)
as one JSON line on stderr. Output files never embed runtime-only knobs
such as the thread count, so identical seeds give byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 calibration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import builtin_manifest, case_study, load_manifest, reproduce
from .calibrate import solve_constant
from .charts import (
    ChartConfig,
    ChartVariant,
    MonitorSession,
    default_config,
    ntcc_alpha,
)
from .errors import CalibrationError, ConfigError, DataError, DispChartsError
from .model import Observation, ProcessModel, ShiftKind, ShiftScenario, phase1_estimate
from .simulate import (
    Convention,
    DEFAULT_WARMUP,
    StreamSpec,
    estimate_ats,
)

log = logging.getLogger("dispcharts")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CALIBRATION = 4

THREADS_ENV = "DISPCHARTS_THREADS"


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")


# --- data & model files -----------------------------------------------------


def read_data_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an observation CSV: header then one observation per row.

    Accepts ``t,x1,...,xp`` or ``x1,...,xp`` headers; without a time column
    the row index (1-based) is used. Malformed rows raise DataError with
    the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one observation")
    header = [c.strip().lower() for c in rows[0]]
    has_time = header[0] == "t"
    width = len(header)
    p = width - 1 if has_time else width
    if p < 1:
        raise DataError(f"{path}: header defines no observation columns")
    times = np.empty(len(rows) - 1, dtype=np.int64)
    data = np.empty((len(rows) - 1, p))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}:{i}: expected {width} columns, found {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{i}: non-numeric value ({exc})") from exc
        if has_time:
            times[i - 2] = int(vals[0])
            data[i - 2] = vals[1:]
        else:
            times[i - 2] = i - 1
            data[i - 2] = vals
    return times, data


def write_model_file(model: ProcessModel, path) -> None:
    payload = {
        "p": model.p,
        "mu0": [repr(float(v)) for v in model.mu0],
        "sigma0": [[repr(float(v)) for v in row] for row in model.sigma0],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_model_file(path) -> ProcessModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        mu = [float(v) for v in payload["mu0"]]
        sigma = [[float(v) for v in row] for row in payload["sigma0"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"model file {path} is malformed: {exc}") from exc
    return ProcessModel(np.asarray(mu), np.asarray(sigma))


# --- shared argument plumbing ------------------------------------------------


def _add_chart_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--chart", required=True,
                    choices=[v.value for v in ChartVariant], help="chart variant")
    sp.add_argument("--p", required=True, type=int, help="number of characteristics")
    sp.add_argument("--n", type=int, help="subgroup size (grouped charts)")
    sp.add_argument("--omega", type=float, help="smoothing constant (mewms)")
    sp.add_argument("--L", type=float, dest="limit_constant",
                    help="limit constant (mewms L or gvc L_gvc)")
    sp.add_argument("--alpha", type=float, help="per-window type I error (ntcc)")
    sp.add_argument("--lcl", type=float, help="explicit lower control limit")
    sp.add_argument("--ucl", type=float, help="explicit upper control limit")


def _build_chart(args) -> ChartConfig:
    variant = ChartVariant(args.chart)
    explicit = (args.lcl is not None) or (args.ucl is not None)
    if explicit and (args.lcl is None or args.ucl is None):
        raise ConfigError("--lcl and --ucl must be given together")
    if variant is ChartVariant.MEWMS:
        if args.omega is None:
            raise ConfigError("mewms needs --omega")
        if args.limit_constant is None:
            return default_config(variant, args.p, omega=args.omega)
        return ChartConfig(variant, p=args.p, omega=args.omega,
                           limit_constant=args.limit_constant)
    if args.n is None:
        raise ConfigError(f"{variant.value} needs --n")
    if variant is ChartVariant.GVC:
        if args.limit_constant is None:
            return default_config(variant, args.p, n=args.n)
        return ChartConfig(variant, p=args.p, n=args.n, limit_constant=args.limit_constant)
    if variant is ChartVariant.NTCC:
        if explicit:
            return ChartConfig(variant, p=args.p, n=args.n, limits=(args.lcl, args.ucl))
        return ChartConfig(variant, p=args.p, n=args.n,
                           alpha=args.alpha if args.alpha is not None else ntcc_alpha(args.n))
    if explicit:
        return ChartConfig(variant, p=args.p, n=args.n, limits=(args.lcl, args.ucl))
    return default_config(variant, args.p, n=args.n)


def _add_scenario_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--delta", type=float, default=1.0, help="variance shift multiplier")
    sp.add_argument("--rho", type=float, default=0.0, help="shifted correlation")
    sp.add_argument("--kind", default="overall",
                    choices=[k.value for k in ShiftKind], help="shift construction")
    sp.add_argument("--q", type=int, help="number of shifted variables (partial)")


def _build_scenario(args) -> ShiftScenario:
    return ShiftScenario(kind=ShiftKind(args.kind), delta=args.delta, rho=args.rho,
                         q=args.q, tau=1)


def _chart_dict(cfg: ChartConfig) -> dict:
    out = {
        "variant": cfg.variant.value,
        "p": cfg.p,
        "n": cfg.n,
        "omega": cfg.omega,
        "limit_constant": cfg.limit_constant,
        "alpha": cfg.alpha,
    }
    if cfg.variant is ChartVariant.MEWMS:
        from .charts import MewmsChart

        out["asymptotic_limits"] = list(MewmsChart(cfg).asymptotic_limits())
    else:
        out["limits"] = list(cfg.control_limits())
    return out


def _log_config(command: str, payload: dict) -> None:
    log.info("%s", json.dumps({"command": command, **payload}, sort_keys=True))


# --- subcommand implementations ----------------------------------------------


def _cmd_phase1(args) -> int:
    _, data = read_data_csv(args.data)
    model = phase1_estimate(data)
    _log_config("phase1", {"input": str(args.data), "rows": int(data.shape[0]),
                           "mu0": [float(v) for v in model.mu0],
                           "sigma0": [[float(v) for v in r] for r in model.sigma0]})
    write_model_file(model, args.output)
    print(f"phase1: wrote model for p={model.p} from {data.shape[0]} observations to {args.output}")
    return EXIT_OK


def _cmd_ats(args) -> int:
    cfg = _build_chart(args)
    scenario = _build_scenario(args)
    model = ProcessModel.standard(args.p)
    spec = StreamSpec(model, scenario, max_time=args.max_time)
    convention = Convention.STEADY_STATE if args.convention == "steady" else Convention.ZERO_STATE
    est = estimate_ats(cfg, cfg.policy(), spec, args.reps, args.seed,
                       convention=convention, threads=args.threads,
                       warmup=args.warmup, steady_mode=args.steady_mode)
    resolved = {
        "chart": _chart_dict(cfg),
        "scenario": {"kind": scenario.kind.value, "delta": scenario.delta,
                     "rho": scenario.rho, "q": scenario.q},
        "replications": args.reps, "seed": args.seed,
        "convention": convention.value, "steady_mode": args.steady_mode,
        "warmup": args.warmup, "max_time": args.max_time, "threads": args.threads,
    }
    _log_config("ats", {**resolved, "ats": est.ats, "stderr": est.stderr,
                        "censored": est.censored_count})
    print(f"ATS = {est.ats:.4f} (stderr {est.stderr:.4f}, {est.replications} replications"
          + (f", {est.censored_count} censored" if est.censored_count else "") + ")")
    if est.censor_warning:
        print(f"warning: {est.censored_count} runs censored at max_time={args.max_time}; "
              "the estimate is biased low", file=sys.stderr)
    if args.output:
        artifact = {k: v for k, v in resolved.items() if k != "threads"}
        artifact.update({"ats": repr(est.ats), "stderr": repr(est.stderr),
                         "censored_count": est.censored_count})
        Path(args.output).write_text(json.dumps(artifact, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    cfg = _build_chart_for_calibration(args)
    result = solve_constant(cfg, cfg.policy(), target_ats=args.target, tol=args.tol,
                            reps_per_eval=args.reps, master_seed=args.seed,
                            bracket_reps=args.bracket_reps, warmup=args.warmup,
                            threads=args.threads)
    _log_config("calibrate", result.to_dict())
    print(f"calibrated {cfg.variant.value}: constant = {result.constant:.6g}, "
          f"achieved ATS = {result.achieved_ats.ats:.2f} "
          f"(stderr {result.achieved_ats.stderr:.2f}, {result.iterations} bisections)")
    if result.limits is not None:
        print(f"limits: lcl = {result.limits[0]:.6f}, ucl = {result.limits[1]:.6f}")
    if args.output:
        Path(args.output).write_text(result.report() + "\n", encoding="utf-8")
    return EXIT_OK


def _build_chart_for_calibration(args) -> ChartConfig:
    variant = ChartVariant(args.chart)
    if variant is ChartVariant.MEWMS:
        if args.omega is None:
            raise ConfigError("mewms calibration needs --omega")
        return ChartConfig(variant, p=args.p, omega=args.omega, limit_constant=1.0)
    if args.n is None:
        raise ConfigError(f"{variant.value} calibration needs --n")
    if variant is ChartVariant.GVC:
        return ChartConfig(variant, p=args.p, n=args.n, limit_constant=1.0)
    if variant is ChartVariant.NTCC:
        return ChartConfig(variant, p=args.p, n=args.n, alpha=ntcc_alpha(args.n))
    nu_limits = (0.5, 2.0)  # placeholder pair; the search replaces it
    return ChartConfig(variant, p=args.p, n=args.n, limits=nu_limits)


def _cmd_reproduce(args) -> int:
    target = args.experiment
    overrides = {}
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.max_time is not None:
        overrides["max_time"] = args.max_time
    if Path(target).exists():
        manifest = load_manifest(target)
        if overrides:
            from .bench import manifest_from_dict

            d = manifest.to_dict()
            d.update(overrides)
            manifest = manifest_from_dict(d)
    else:
        manifest = builtin_manifest(target, **overrides)
    _log_config("reproduce", manifest.to_dict())
    out_path = args.output or f"{manifest.experiment}.csv"
    reproduce(manifest, out_path)
    print(f"reproduce: wrote {out_path}")
    return EXIT_OK


def _cmd_monitor(args) -> int:
    model = read_model_file(args.model) if args.model else None
    cfg = _build_chart(args)
    if model is not None and model.p != cfg.p:
        raise ConfigError(f"model dimension {model.p} does not match chart --p {cfg.p}")
    times, data = read_data_csv(args.data)
    if data.shape[1] != cfg.p:
        raise DataError(f"{args.data}: observations have {data.shape[1]} columns, chart expects {cfg.p}")
    session = MonitorSession(cfg, model=model)
    if args.state_in:
        state_path = Path(args.state_in)
        if not state_path.exists():
            raise DataError(f"state file not found: {state_path}")
        session.restore(state_path.read_text(encoding="utf-8"))
    _log_config("monitor", {"chart": _chart_dict(cfg), "data": str(args.data),
                            "model": str(args.model), "rows": int(data.shape[0]),
                            "state_in": args.state_in, "state_out": args.state_out})
    rows = []
    signals = 0
    for t, x in zip(times, data):
        out = session.update(Observation(int(t), x))
        if out is not None:
            rows.append(out)
            signals += out.signal
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "statistic", "lcl", "ucl", "signal"])
        for o in rows:
            w.writerow([o.time, repr(o.statistic), repr(o.lcl), repr(o.ucl), int(o.signal)])
    if args.state_out:
        Path(args.state_out).write_text(session.snapshot() + "\n", encoding="utf-8")
    print(f"monitor: {len(rows)} plotted points, {signals} signals -> {args.output}")
    return EXIT_OK


def _cmd_casestudy(args) -> int:
    result = case_study(seed=args.seed, phase1_path=args.phase1, out_dir=args.output)
    _log_config("casestudy", {"seed": args.seed, "phase1": str(args.phase1),
                              "output": str(args.output),
                              "mu0": [float(v) for v in result.model.mu0]})
    print(f"casestudy: Phase I mean = {np.array2string(result.model.mu0, precision=5)}, "
          f"changepoints at t={result.changepoints[0]} (increase) and "
          f"t={result.changepoints[1]} (decrease)")
    for token, s in result.summaries.items():
        inc = f"increase delay {s.increase_delay}" if s.increase_delay is not None else "increase missed"
        dec = "decrease detected" if s.decrease_detected else "decrease missed"
        print(f"  {token:10s} signals={list(s.signals)} | {inc} | {dec}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dispcharts",
                                 description="Multivariate dispersion control charts: "
                                             "calibrate, simulate, reproduce, monitor.")
    ap.add_argument("--version", action="version", version=f"dispcharts {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phase1", help="estimate an in-control model from historical data")
    sp.add_argument("data", help="CSV of historical observations")
    sp.add_argument("-o", "--output", default="model.json", help="model file to write")
    sp.set_defaults(func=_cmd_phase1)

    sp = sub.add_parser("ats", help="estimate average time to signal by simulation")
    _add_chart_args(sp)
    _add_scenario_args(sp)
    sp.add_argument("--reps", type=int, default=50000, help="Monte Carlo replications")
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--convention", choices=["zero", "steady"], default="steady")
    sp.add_argument("--steady-mode", choices=["simulate", "additive"], default="simulate")
    sp.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    sp.add_argument("--max-time", type=int, default=1_000_000)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("-o", "--output", help="write the estimate as JSON")
    sp.set_defaults(func=_cmd_ats)

    sp = sub.add_parser("calibrate", help="search a chart constant for a target in-control ATS")
    _add_chart_args(sp)
    sp.add_argument("--target", type=float, default=370.0, help="target in-control ATS")
    sp.add_argument("--tol", type=float, help="ATS tolerance (default max(1, 2 stderr))")
    sp.add_argument("--reps", type=int, default=50000, help="replications for the final polish")
    sp.add_argument("--bracket-reps", type=int, default=10000, help="replications while bracketing")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("-o", "--output", help="write the calibration report JSON")
    sp.set_defaults(func=_cmd_calibrate)

    sp = sub.add_parser("reproduce", help="run an experiment manifest (built-in name or JSON path)")
    sp.add_argument("experiment", help="table8|table9|table10|table11|fig1|fig1b|fig2|fig2b or a manifest file")
    sp.add_argument("--reps", type=int, help="override replications")
    sp.add_argument("--seed", type=int, help="override master seed")
    sp.add_argument("--max-time", type=int, help="override the simulation horizon")
    sp.add_argument("-o", "--output", help="output CSV path (default <experiment>.csv)")
    sp.set_defaults(func=_cmd_reproduce)

    sp = sub.add_parser("monitor", help="run one chart over a data CSV")
    sp.add_argument("data", help="CSV of raw observations")
    sp.add_argument("--model", help="model file for standardization (phase1 output)")
    _add_chart_args(sp)
    sp.add_argument("-o", "--output", default="monitor.csv", help="per-time chart output CSV")
    sp.add_argument("--state-in", help="resume from a session snapshot")
    sp.add_argument("--state-out", help="write the session snapshot after the batch")
    sp.set_defaults(func=_cmd_monitor)

    sp = sub.add_parser("casestudy", help="Phase I + simulated Phase II with all reference charts")
    sp.add_argument("--phase1", help="Phase I CSV (default: packaged example data)")
    sp.add_argument("--seed", type=int, default=7, help="stream seed")
    sp.add_argument("-o", "--output", default="casestudy_out", help="output directory")
    sp.set_defaults(func=_cmd_casestudy)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        try:
            args.threads = _default_threads()
        except ConfigError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DispChartsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
