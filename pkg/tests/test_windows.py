import numpy as np
import pytest

from dispcharts.errors import ConfigError, DataError
from dispcharts.model import Observation
from dispcharts.windows import AggregationMode, AggregationPolicy, SubgroupAssembler

BP_DATA = [
    [173, 86], [176, 87], [163, 84], [169, 85], [153, 82], [152, 83],
]


def push_all(policy, data=BP_DATA, start=1):
    asm = SubgroupAssembler(policy)
    out = []
    for i, x in enumerate(data):
        w = asm.push(Observation(start + i, np.asarray(x, dtype=float)))
        if w is not None:
            out.append(w)
    return out


class TestPolicies:
    def test_individual_needs_n1(self):
        with pytest.raises(ConfigError):
            AggregationPolicy(AggregationMode.INDIVIDUAL, 2)

    def test_grouped_needs_n2(self):
        with pytest.raises(ConfigError):
            AggregationPolicy(AggregationMode.OVERLAPPING, 1)


class TestEmissions:
    def test_individual_every_observation(self):
        wins = push_all(AggregationPolicy.individual())
        assert [w.end_time for w in wins] == [1, 2, 3, 4, 5, 6]
        assert all(w.columns.shape == (2, 1) for w in wins)

    def test_non_overlapping_pairs(self):
        wins = push_all(AggregationPolicy.non_overlapping(2))
        assert [w.end_time for w in wins] == [2, 4, 6]
        assert np.array_equal(wins[0].columns.T, BP_DATA[0:2])
        assert np.array_equal(wins[1].columns.T, BP_DATA[2:4])
        assert np.array_equal(wins[2].columns.T, BP_DATA[4:6])

    def test_overlapping_slides_by_one(self):
        wins = push_all(AggregationPolicy.overlapping(2))
        assert [w.end_time for w in wins] == [2, 3, 4, 5, 6]
        for k, w in enumerate(wins):
            assert np.array_equal(w.columns.T, BP_DATA[k:k + 2])

    def test_emission_counts_invariant(self):
        for t in (1, 4, 9, 17):
            data = [[float(i), float(-i)] for i in range(t)]
            assert len(push_all(AggregationPolicy.individual(), data)) == t
            for n in (2, 3, 5):
                assert len(push_all(AggregationPolicy.overlapping(n), data)) == max(0, t - n + 1)
                assert len(push_all(AggregationPolicy.non_overlapping(n), data)) == t // n

    def test_overlap_equals_non_overlap_at_block_ends(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((12, 3)).tolist()
        n = 3
        over = {w.end_time: w for w in push_all(AggregationPolicy.overlapping(n), data)}
        block = push_all(AggregationPolicy.non_overlapping(n), data)
        for w in block:
            assert np.array_equal(w.columns, over[w.end_time].columns)


class TestSequencing:
    def test_out_of_order_raises(self):
        asm = SubgroupAssembler(AggregationPolicy.individual())
        asm.push(Observation(5, np.zeros(2)))
        with pytest.raises(DataError, match="out-of-order"):
            asm.push(Observation(5, np.zeros(2)))
        with pytest.raises(DataError, match="out-of-order"):
            asm.push(Observation(3, np.zeros(2)))

    def test_emitted_windows_own_their_data(self):
        asm = SubgroupAssembler(AggregationPolicy.overlapping(2))
        x = np.array([1.0, 2.0])
        asm.push(Observation(1, x))
        w = asm.push(Observation(2, np.array([3.0, 4.0])))
        x[0] = 99.0
        assert w.columns[0, 0] == 1.0

    def test_reset_and_state_roundtrip(self):
        asm = SubgroupAssembler(AggregationPolicy.overlapping(3))
        for t in (1, 2):
            asm.push(Observation(t, np.array([float(t), 0.0])))
        state = asm.get_state()
        asm2 = SubgroupAssembler(AggregationPolicy.overlapping(3))
        asm2.set_state(state)
        w1 = asm.push(Observation(3, np.ones(2)))
        w2 = asm2.push(Observation(3, np.ones(2)))
        assert np.array_equal(w1.columns, w2.columns)
        asm.reset()
        assert asm.push(Observation(1, np.zeros(2))) is None
