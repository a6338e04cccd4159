import math

import numpy as np
import pytest

from dispcharts.charts import ChartConfig, ChartVariant, default_config, monitor_stream
from dispcharts.errors import ConfigError
from dispcharts.model import ProcessModel, ShiftKind, ShiftScenario
from dispcharts.numerics import RngStream
from dispcharts.simulate import (
    Convention,
    StreamSpec,
    convert_ats,
    estimate_ats,
    gen_stream,
    run_length,
    steady_state_ats,
)
from dispcharts.windows import AggregationPolicy


def std_spec(p=2, scenario=None, max_time=100_000):
    return StreamSpec(ProcessModel.standard(p),
                      scenario or ShiftScenario.in_control(), max_time=max_time)


class TestGenStream:
    def test_bit_identical_rerun(self):
        spec = std_spec(2, ShiftScenario(kind=ShiftKind.OVERALL, delta=2.0, tau=50))
        a = gen_stream(spec, RngStream(5, 3), length=200)
        b = gen_stream(spec, RngStream(5, 3), length=200)
        assert all(np.array_equal(x.x, y.x) and x.t == y.t for x, y in zip(a, b))

    def test_in_control_when_delta_one(self):
        spec = std_spec(2, ShiftScenario(kind=ShiftKind.OVERALL, delta=1.0, tau=10))
        base = std_spec(2, ShiftScenario.in_control())
        a = gen_stream(spec, RngStream(5, 3), length=100)
        b = gen_stream(base, RngStream(5, 3), length=100)
        assert all(np.array_equal(x.x, y.x) for x, y in zip(a, b))

    def test_post_changepoint_covariance(self):
        spec = std_spec(2, ShiftScenario(kind=ShiftKind.OVERALL, delta=2.0, tau=11))
        obs = gen_stream(spec, RngStream(6, 0), length=100_010)
        post = np.array([o.x for o in obs[10:]])
        cov = np.cov(post, rowvar=False)
        assert np.max(np.abs(cov - 2.0 * np.eye(2))) <= 0.05
        pre = np.array([o.x for o in obs[:10]])
        assert np.max(np.abs(pre)) < 6.0  # unshifted scale

    def test_raw_space_uses_model(self):
        mu = np.array([4.0, 7.0])
        sig = np.array([[0.09, 0.05], [0.05, 0.2]])
        spec = StreamSpec(ProcessModel(mu, sig), ShiftScenario.in_control(), max_time=10)
        obs = gen_stream(spec, RngStream(7, 0), length=50_000)
        x = np.array([o.x for o in obs])
        assert np.allclose(x.mean(axis=0), mu, atol=0.02)
        assert np.max(np.abs(np.cov(x, rowvar=False) - sig)) <= 0.02


class TestRunLength:
    def test_infinite_limits_censor(self):
        cfg = ChartConfig(ChartVariant.NTCC, p=2, n=5, limits=(-math.inf, math.inf))
        spec = std_spec(2, max_time=500)
        res = run_length(cfg, cfg.policy(), spec, RngStream(1, 0))
        assert res.censored and res.ticks == 500

    def test_grouped_signal_on_window_boundary(self):
        cfg = default_config("ntcc", 2, n=5)
        spec = std_spec(2)
        for k in range(20):
            res = run_length(cfg, cfg.policy(), spec, RngStream(2, k))
            assert res.ticks % 5 == 0

    def test_incompatible_policy_rejected(self):
        cfg = default_config("ntcc", 2, n=5)
        with pytest.raises(ConfigError, match="non_overlapping"):
            run_length(cfg, AggregationPolicy.overlapping(5), std_spec(2), RngStream(0, 0))

    def test_model_dimension_checked(self):
        cfg = default_config("ntcc", 2, n=5)
        with pytest.raises(ConfigError, match="dimension"):
            run_length(cfg, cfg.policy(), std_spec(3), RngStream(0, 0))


class TestKernelEquivalence:
    """The fast block kernels must reproduce the chart state machines exactly."""

    CASES = [
        ("mewms", 2, None, 0.2),
        ("mewms", 3, None, 0.9),
        ("gvc", 2, 5, None),
        ("ntcc", 2, 3, None),
        ("otcc", 2, 10, None),
        ("otmc", 2, 3, None),
        ("otmc", 4, 6, None),
    ]

    @pytest.mark.parametrize("variant,p,n,omega", CASES)
    def test_zero_state_ticks_match(self, variant, p, n, omega):
        if variant == "mewms":
            cfg = ChartConfig(ChartVariant.MEWMS, p=p, omega=omega,
                              limit_constant=3.0 if p == 2 else 3.5)
        elif (p, n) in {(2, 3), (2, 5), (2, 10)} and variant != "otmc":
            cfg = default_config(variant, p, n=n)
        elif variant == "otmc" and (p, n) == (2, 3):
            cfg = default_config(variant, p, n=n)
        else:
            cfg = ChartConfig(ChartVariant(variant), p=p, n=n, limits=(0.35, 2.6))
        scen = ShiftScenario(kind=ShiftKind.OVERALL, delta=1.3, tau=1)
        spec = StreamSpec(ProcessModel.standard(p), scen, max_time=4000)
        for k in range(60):
            rng = RngStream(31, k)
            fast = run_length(cfg, cfg.policy(), spec, rng, Convention.ZERO_STATE)
            obs = gen_stream(spec, rng, length=4000)
            outs = monitor_stream(cfg, obs)
            sig = [o.time for o in outs if o.signal]
            slow = sig[0] if sig else 4000
            assert fast.ticks == slow


class TestConvertAts:
    def test_formulas(self):
        assert convert_ats(37, AggregationPolicy.non_overlapping(10)) == 370
        assert convert_ats(361, AggregationPolicy.overlapping(10)) == 370
        assert convert_ats(370, AggregationPolicy.individual()) == 370
        assert convert_ats(37, AggregationPolicy.non_overlapping(10),
                           Convention.STEADY_STATE) == 375
        assert steady_state_ats(365.0, 10) == 370.0

    def test_arl_floor(self):
        with pytest.raises(ConfigError):
            convert_ats(0.5, AggregationPolicy.individual())


class TestEstimateAts:
    def test_thread_count_invariance(self):
        cfg = default_config("otmc", 2, n=5)
        spec = std_spec(2)
        kw = dict(replications=800, master_seed=42, convention=Convention.STEADY_STATE)
        e1 = estimate_ats(cfg, cfg.policy(), spec, threads=1, **kw)
        e3 = estimate_ats(cfg, cfg.policy(), spec, threads=3, **kw)
        assert e1 == e3

    def test_replication_streams_are_stable(self):
        # adding replications must not change the early ones
        cfg = default_config("ntcc", 2, n=5)
        spec = std_spec(2)
        t_small = [run_length(cfg, cfg.policy(), spec, RngStream(9, k)).ticks for k in range(50)]
        t_large = [run_length(cfg, cfg.policy(), spec, RngStream(9, k)).ticks for k in range(80)]
        assert t_small == t_large[:50]

    def test_ntcc_in_control_near_design(self):
        cfg = default_config("ntcc", 2, n=5)
        est = estimate_ats(cfg, cfg.policy(), std_spec(2), 10_000, 101,
                           convention=Convention.STEADY_STATE)
        assert abs(est.ats - 370.37) <= 3 * est.stderr

    def test_mewms_monotone_in_delta(self):
        cfg = default_config("mewms", 2, omega=0.2)
        values = {}
        for delta in (1.0, 1.2, 1.4, 2.0):
            scen = ShiftScenario(kind=ShiftKind.OVERALL, delta=delta, tau=1)
            est = estimate_ats(cfg, cfg.policy(), std_spec(2, scen), 4000, 55,
                               convention=Convention.STEADY_STATE)
            values[delta] = est.ats
        assert values[2.0] < values[1.4] < values[1.2] < values[1.0]

    def test_additive_mode_is_zero_state_plus_half_subgroup(self):
        cfg = default_config("otcc", 2, n=10)
        scen = ShiftScenario(kind=ShiftKind.OVERALL, delta=1.5, tau=1)
        spec = std_spec(2, scen)
        zero = estimate_ats(cfg, cfg.policy(), spec, 600, 77, Convention.ZERO_STATE)
        steady = estimate_ats(cfg, cfg.policy(), spec, 600, 77, Convention.STEADY_STATE,
                              steady_mode="additive")
        assert steady.ats == pytest.approx(zero.ats + 5.0, abs=1e-12)
        assert steady.stderr == pytest.approx(zero.stderr, abs=1e-12)

    def test_steady_in_control_has_no_phase_shift(self):
        cfg = default_config("ntcc", 2, n=10)
        spec = std_spec(2)
        zero = estimate_ats(cfg, cfg.policy(), spec, 500, 11, Convention.ZERO_STATE)
        steady = estimate_ats(cfg, cfg.policy(), spec, 500, 11, Convention.STEADY_STATE)
        assert steady.ats == zero.ats

    def test_censor_warning_flag(self):
        cfg = ChartConfig(ChartVariant.NTCC, p=2, n=5, limits=(-math.inf, math.inf))
        est = estimate_ats(cfg, cfg.policy(), std_spec(2, max_time=100), 50, 3,
                           convention=Convention.ZERO_STATE)
        assert est.censored_count == 50
        assert est.censor_warning
        assert est.ats == pytest.approx(100.0)

    def test_replications_floor(self):
        cfg = default_config("ntcc", 2, n=5)
        with pytest.raises(ConfigError):
            estimate_ats(cfg, cfg.policy(), std_spec(2), 1, 0)

    def test_mewms_steady_protocol_measures_from_changepoint(self):
        # a huge shift must be caught within a few observations of the
        # changepoint, far sooner than the warm-up length
        cfg = default_config("mewms", 2, omega=0.9)
        scen = ShiftScenario(kind=ShiftKind.OVERALL, delta=25.0, tau=1)
        est = estimate_ats(cfg, cfg.policy(), std_spec(2, scen), 400, 13,
                           convention=Convention.STEADY_STATE)
        assert est.ats < 10.0
