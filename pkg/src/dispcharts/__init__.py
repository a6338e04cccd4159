"""Multivariate dispersion control charts over individual and grouped observations.

Five charts (MEWMS, GVC, NTCC, OTCC, OTMC), subgroup aggregation policies,
Monte Carlo average-time-to-signal estimation, control-constant calibration
by stochastic root finding, experiment reproduction, and a CLI.
"""

from .bench import ExperimentManifest, builtin_manifest, case_study, load_manifest, reproduce
from .calibrate import CalibrationResult, solve_constant, two_sided_limits
from .charts import (
    DESIGN_ATS0,
    GVC_L,
    MEWMS_L,
    OTCC_LIMITS,
    OTMC_LIMITS,
    ChartConfig,
    ChartOutput,
    ChartVariant,
    GvcConstants,
    MonitorSession,
    default_config,
    gvc_constants,
    make_chart,
    monitor_stream,
    ntcc_alpha,
)
from .errors import CalibrationError, ConfigError, DataError, DispChartsError, NumericsError
from .model import (
    Observation,
    ProcessModel,
    ShiftKind,
    ShiftScenario,
    build_covariance,
    phase1_estimate,
    standardize,
)
from .numerics import RngStream, chisq_cdf, chisq_quantile, cholesky, det_sym, inv_sqrt_sym
from .simulate import (
    AtsEstimate,
    Convention,
    RunResult,
    StreamSpec,
    convert_ats,
    estimate_ats,
    gen_stream,
    run_length,
    steady_state_ats,
)
from .windows import AggregationMode, AggregationPolicy, SubgroupAssembler, SubgroupWindow

__version__ = "0.1.0"

__all__ = [
    "AggregationMode",
    "AggregationPolicy",
    "AtsEstimate",
    "CalibrationError",
    "CalibrationResult",
    "ChartConfig",
    "ChartOutput",
    "ChartVariant",
    "ConfigError",
    "Convention",
    "DESIGN_ATS0",
    "DataError",
    "DispChartsError",
    "ExperimentManifest",
    "GVC_L",
    "GvcConstants",
    "MEWMS_L",
    "MonitorSession",
    "NumericsError",
    "OTCC_LIMITS",
    "OTMC_LIMITS",
    "Observation",
    "ProcessModel",
    "RngStream",
    "RunResult",
    "ShiftKind",
    "ShiftScenario",
    "StreamSpec",
    "SubgroupAssembler",
    "SubgroupWindow",
    "build_covariance",
    "builtin_manifest",
    "case_study",
    "chisq_cdf",
    "chisq_quantile",
    "cholesky",
    "convert_ats",
    "default_config",
    "det_sym",
    "estimate_ats",
    "gen_stream",
    "gvc_constants",
    "inv_sqrt_sym",
    "load_manifest",
    "make_chart",
    "monitor_stream",
    "ntcc_alpha",
    "phase1_estimate",
    "reproduce",
    "run_length",
    "solve_constant",
    "standardize",
    "steady_state_ats",
    "two_sided_limits",
    "__version__",
]
