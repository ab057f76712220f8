import json

import numpy as np
import pytest

from birkhoff.errors import InsufficientDataError, InvalidEpsilonError, InvalidInputError
from birkhoff.means import LevelHistory, build_tower, run_cascade
from birkhoff.oscillation import (
    OscillationProfile,
    contraction_bound,
    detect_crossings,
    detect_times,
    extremal_times,
    hardy_d_bound,
    index_ratios,
    profile_to_jsonl,
    ratio_stats,
)
from birkhoff.sequences import builtin_spec, spec_stream

INDICES = np.arange(1, 11)
VALUES = np.array([0.5, 1.0, 0.9, 0.0, 0.1, 1.0, 0.0, 0.5, 0.95, 0.52])


def toy_history(values=VALUES):
    return LevelHistory(0, INDICES, np.asarray(values, dtype=np.float64))


class TestRatios:

    def test_index_ratios(self):
        """Test consecutive ratios, with log-only times treated as unbounded"""
        ratios = index_ratios(np.array([1.0, 2.0, np.inf, np.inf]))
        assert ratios[0] == 2.0
        assert np.isinf(ratios[1:]).all()

    def test_ratio_stats(self):
        """Test max over the final half, median and a positive trend for growing ratios"""
        stats = ratio_stats(np.array([2.0, 2.0, 2.0, 8.0]))
        assert stats.count == 4
        assert stats.max_tail == 8.0
        assert stats.median == 2.0
        assert stats.trend > 0

    def test_empty_ratio_stats(self):
        """Test the neutral statistics of an empty list"""
        stats = ratio_stats(np.array([]))
        assert stats.to_dict() == {'count': 0, 'max_tail': 1.0, 'median': 1.0, 'trend': 0.0}


class TestDetectTimes:

    def test_alternating_times(self):
        """Test first passages alternate between the upper and lower bands"""
        profile = detect_times(toy_history(), 0.0, 1.0, 0.2)
        assert profile.times.tolist() == [2, 4, 6, 7, 9]
        assert profile.parities == ['hi', 'lo', 'hi', 'lo', 'hi']
        assert profile.ratios.tolist() == pytest.approx([2.0, 1.5, 7.0 / 6.0, 9.0 / 7.0])

    def test_epsilon_too_large(self):
        """Test bands that overlap are rejected"""
        with pytest.raises(InvalidEpsilonError):
            detect_times(toy_history(), 0.0, 1.0, 0.5)
        with pytest.raises(InvalidEpsilonError):
            detect_times(toy_history(), 0.0, 1.0, 0.0)

    def test_too_few_times(self):
        """Test a flat history has no oscillation times"""
        with pytest.raises(InsufficientDataError):
            detect_times(toy_history(np.full(10, 0.5)), 0.0, 1.0, 0.1)

    def test_records(self):
        """Test JSON lines carry index, ratio and parity"""
        profile = detect_times(toy_history(), 0.0, 1.0, 0.2)
        records = [json.loads(line) for line in profile_to_jsonl(profile).splitlines()]
        assert records[0] == {'j': 1, 't': 2, 'ratio': 2.0, 'parity': 'hi'}
        assert records[-1]['ratio'] is None


class TestDetectCrossings:

    def test_crossings(self):
        """Test indices inside the open band around gamma"""
        crossings = detect_crossings(toy_history(), 0.5, 0.1)
        assert crossings.indices.tolist() == [1, 8, 10]
        assert len(crossings) == 3
        records = crossings.to_records()
        assert [r['parity'] for r in records] == ['hi', 'hi', 'hi']

    def test_empty_profile_is_valid(self):
        """Test a level never reached gives an empty profile"""
        crossings = detect_crossings(toy_history(), 0.3, 0.01)
        assert len(crossings) == 0
        assert crossings.stats().count == 0

    def test_invalid_arguments(self):
        """Test non-positive epsilon and empty histories are rejected"""
        with pytest.raises(InvalidEpsilonError):
            detect_crossings(toy_history(), 0.5, 0.0)
        with pytest.raises(InvalidInputError):
            detect_crossings(LevelHistory(0, np.array([], dtype=np.int64), np.array([])), 0.5, 0.1)


    def test_tail_ratios(self):
        """Test ratios start at the first index past min_time"""
        history = LevelHistory(0, np.array([50, 100, 200, 220, 2200]), np.full(5, 0.5))
        crossings = detect_crossings(history, 0.5, 0.1)
        assert crossings.tail_ratios(100).tolist() == pytest.approx([2.0, 1.1, 10.0])
        assert crossings.tail_ratios(10).size == 4
        assert crossings.stats(100).count == 3


class TestBounds:

    def test_hardy_d(self):
        """Test the ratio lower bound for raw hull [0, 1] and level-0 hull [1/3, 2/3]"""
        d = hardy_d_bound(0.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.05)
        assert d == pytest.approx((2.0 / 3.0) / (1.0 / 3.0 + 0.1))

    def test_hardy_d_invalid(self):
        """Test misordered hulls and epsilons leaving d <= 1"""
        with pytest.raises(InvalidInputError):
            hardy_d_bound(0.5, 1.0, 0.2, 0.8, 0.05)
        with pytest.raises(InvalidEpsilonError):
            hardy_d_bound(0.0, 1.0, 1.0 / 3.0, 2.0 / 3.0, 0.2)

    def test_contraction_bound(self):
        """Test (D-1)/(D+1) scaling"""
        assert contraction_bound(2.0, 1.0) == pytest.approx(1.0 / 3.0)
        with pytest.raises(InvalidInputError):
            contraction_bound(1.0, 1.0)


class TestExtremalTimes:

    def test_argmax_and_argmin(self):
        """Test upper intervals take the argmax and lower ones the argmin"""
        history = LevelHistory(1, INDICES, np.array([0.0, 1.0, 3.0, 2.0, 5.0, 4.0, -1.0, 0.0, 6.0, 7.0]))
        previous = OscillationProfile(times=np.array([2, 5, 9]), parities=['hi', 'lo', 'hi'])
        current = extremal_times(history, previous)
        assert current.times.tolist() == [3, 7]
        assert current.parities == ['hi', 'lo']
        assert current.level == 1

    def test_ties_take_smaller_index(self):
        """Test ties resolve to the earlier index"""
        history = LevelHistory(1, INDICES, np.array([0.0, 2.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
        previous = OscillationProfile(times=np.array([1, 5]), parities=['hi', 'lo'])
        assert extremal_times(history, previous).times.tolist() == [2]


class TestExample1Oscillation:

    def test_ratios_near_two(self, example1_run):
        """Test oscillation times of the doubling-block averages double"""
        tower = build_tower(example1_run, 0.5)
        level0 = tower.level(0)
        profile = detect_times(example1_run.holder[0], level0.lo, level0.hi, 0.05)
        ratios = profile.tail_ratios(1000)
        assert ratios.size >= 8
        assert np.all((ratios > 1.9) & (ratios < 2.1))

    def test_ratios_above_hardy_bound(self, example1_run):
        """Test every tail ratio respects the lower bound d"""
        tower = build_tower(example1_run, 0.5)
        raw, level0 = tower.level(-1), tower.level(0)
        profile = detect_times(example1_run.holder[0], level0.lo, level0.hi, 0.05)
        d = hardy_d_bound(raw.lo, raw.hi, level0.lo, level0.hi, 0.05)
        assert d == pytest.approx(1.538, abs=0.05)
        assert np.all(profile.tail_ratios(100) >= d)

    def test_width_matches_contraction(self, example1_run):
        """Test the level-0 width sits at the bound for D = 2"""
        tower = build_tower(example1_run, 0.5)
        assert tower.level(0).width == pytest.approx(contraction_bound(2.0, tower.level(-1).width), abs=0.02)

    def test_level1_extremal_times(self, example1_run):
        """Test level-1 extremal times keep ratios near two"""
        tower = build_tower(example1_run, 0.5)
        level0 = tower.level(0)
        profile = detect_times(example1_run.holder[0], level0.lo, level0.hi, 0.05)
        level1 = extremal_times(example1_run.holder[1], profile)
        assert 1.8 <= level1.stats(1000).median <= 2.2

    def test_crossings_bounded(self, example1_run):
        """Test crossings of 1/2 recur at bounded ratios"""
        stats = detect_crossings(example1_run.holder[0], 0.5, 0.05).stats()
        assert 1.5 < stats.max_tail < 2.5


class TestExample2Oscillation:

    def test_crossing_ratios_grow(self, example2_run):
        """Test crossings of 1/2 drift apart for the cumulative-block averages"""
        stats = detect_crossings(example2_run.holder[0], 0.5, 0.05).stats()
        assert stats.max_tail / stats.median > 5.0


class TestGridRefinement:

    @pytest.mark.parametrize('coarse', [1.01, 1.005])
    def test_times_stable_under_refinement(self, coarse):
        """Test oscillation ratios barely move when the recording grid is refined"""
        spec, obs_map = builtin_spec('example1')
        medians = []
        for grid_gamma in (coarse, 1.001):
            run = run_cascade(spec_stream(spec, obs_map, name='example1'), 2 ** 16, order=1, grid_gamma=grid_gamma)
            level0 = build_tower(run, 0.5).level(0)
            ratios = detect_times(run.holder[0], level0.lo, level0.hi, 0.05).tail_ratios(1000)
            assert ratios.size >= 4
            medians.append(float(np.median(ratios)))
        assert medians[0] == pytest.approx(medians[1], abs=0.05)


if __name__ == '__main__':
    pytest.main([__file__])
