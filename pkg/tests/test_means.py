import functools
import math

import numpy as np
import pytest

from birkhoff.errors import InsufficientDataError, InvalidInputError
from birkhoff.means import (
    CesaroCascade,
    IntervalTower,
    KahanSum,
    LevelHistory,
    LimitSetEstimate,
    MeanCascade,
    RawEnvelope,
    build_tower,
    estimate_limit_set,
    geometric_grid,
    history_to_csv,
    run_cascade,
    to_increments,
    tower_summary,
)
from birkhoff.sequences import ObservableStream, builtin_spec, example3_stream, generate


def holder_oracle(values, order):
    """Nested cumulative means, one row per level"""
    idx = np.arange(1, len(values) + 1, dtype=np.float64)
    rows = []
    previous = np.asarray(values, dtype=np.float64)
    for _ in range(order + 1):
        previous = np.cumsum(previous) / idx
        rows.append(previous)
    return np.array(rows)


@functools.lru_cache(maxsize=None)
def binomial_norms(n, k):
    """binom(i+k-1, k) for i = 1..n"""
    return np.array([math.comb(i + k - 1, k) for i in range(1, n + 1)], dtype=np.float64)


def cesaro_oracle(values, order):
    """(C, k) means of the partial means: k-fold cumulative sums over binom(n+k-1, k)"""
    means = holder_oracle(values, 0)[0]
    n = len(values)
    rows = [means]
    for k in range(1, order + 1):
        sums = means.copy()
        for _ in range(k):
            sums = np.cumsum(sums)
        rows.append(sums / binomial_norms(n, k))
    return np.array(rows)


class TestKahanSum:

    def test_compensation(self):
        """Test many small terms survive next to a large one"""
        total = KahanSum(1e16)
        for _ in range(1000):
            total.add(1.0)
        assert total.value == 1e16 + 1000


class TestGeometricGrid:

    def test_grid_properties(self):
        """Test the grid is strictly increasing, starts at 1 and ends at n_max"""
        grid = geometric_grid(10 ** 6, 1.001)
        assert grid[0] == 1
        assert grid[-1] == 10 ** 6
        assert np.all(np.diff(grid) > 0)

    def test_grid_ratio(self):
        """Test consecutive grid points stay within the grid ratio once past integer rounding"""
        grid = geometric_grid(10 ** 7, 1.01).astype(np.float64)
        far = grid[grid > 1000]
        assert np.all(far[1:] / far[:-1] < 1.01 + 1e-3)

    def test_invalid_arguments(self):
        """Test gamma <= 1 and n_max < 1 are rejected"""
        with pytest.raises(InvalidInputError):
            geometric_grid(100, 1.0)
        with pytest.raises(InvalidInputError):
            geometric_grid(0)


class TestMeanCascade:

    def test_push_small_sequence(self):
        """Test B and H^(1) after 0, 1, 1"""
        cascade = MeanCascade(order=2)
        for value in (0.0, 1.0, 1.0):
            cascade.push(value)
        assert cascade.n == 3
        assert cascade.levels[0] == pytest.approx(2.0 / 3.0)
        assert cascade.levels[1] == pytest.approx(7.0 / 18.0)

    def test_extend_matches_push(self):
        """Test chunk updates agree with term-by-term updates"""
        values = np.random.default_rng(7).random(5000)
        pushed = MeanCascade(order=4)
        for value in values:
            pushed.push(float(value))
        chunked = MeanCascade(order=4)
        for start in range(0, values.size, 333):
            chunked.extend(values[start:start + 333])
        np.testing.assert_allclose(chunked.levels, pushed.levels, rtol=1e-12)

    def test_extend_matches_oracle(self):
        """Test every intermediate level value against nested cumulative means"""
        values = np.random.default_rng(3).normal(size=2000)
        cascade = MeanCascade(order=3)
        out = np.concatenate([cascade.extend(values[:700]), cascade.extend(values[700:])], axis=1)
        np.testing.assert_allclose(out, holder_oracle(values, 3), rtol=1e-9, atol=1e-12)

    def test_rejects_non_finite(self):
        """Test NaN and inf are rejected"""
        cascade = MeanCascade(order=1)
        with pytest.raises(InvalidInputError):
            cascade.push(float('nan'))
        with pytest.raises(InvalidInputError):
            cascade.extend(np.array([1.0, np.inf]))

    def test_rejects_out_of_bound(self):
        """Test values beyond the declared bound are rejected"""
        cascade = MeanCascade(order=1, bound=1.0)
        cascade.push(1.0)
        with pytest.raises(InvalidInputError):
            cascade.push(1.5)

    def test_order_limits(self):
        """Test the order must lie in [0, 8]"""
        with pytest.raises(InvalidInputError):
            MeanCascade(order=9)
        with pytest.raises(InvalidInputError):
            CesaroCascade(order=-1)

    def test_snapshot(self):
        """Test snapshots are immutable copies"""
        cascade = MeanCascade(order=1)
        cascade.push(2.0)
        snapshot = cascade.snapshot()
        cascade.push(0.0)
        assert snapshot.levels == (2.0, 2.0)
        assert snapshot.to_dict() == {'family': 'holder', 'n': 1, 'levels': [2.0, 2.0]}


class TestCesaroCascade:

    def test_push_small_sequence(self):
        """Test C^(1) equals H^(1) after 0, 1, 1"""
        cascade = CesaroCascade(order=1)
        for value in (0.0, 1.0, 1.0):
            cascade.push(value)
        assert cascade.levels[1] == pytest.approx(7.0 / 18.0)

    def test_push_matches_oracle(self):
        """Test the recursion against binomial-normalised cumulative sums"""
        values = np.random.default_rng(11).random(300)
        cascade = CesaroCascade(order=4)
        history = []
        for value in values:
            cascade.push(float(value))
            history.append(cascade.levels.copy())
        np.testing.assert_allclose(np.array(history).T, cesaro_oracle(values, 4), rtol=1e-10, atol=1e-13)

    def test_extend_matches_push(self):
        """Test chunk updates agree with term-by-term updates"""
        values = np.random.default_rng(5).random(5000)
        pushed = CesaroCascade(order=4)
        for value in values:
            pushed.push(float(value))
        chunked = CesaroCascade(order=4)
        outputs = [chunked.extend(values[start:start + 1024]) for start in range(0, values.size, 1024)]
        np.testing.assert_allclose(chunked.levels, pushed.levels, rtol=1e-10)
        np.testing.assert_allclose(np.concatenate(outputs, axis=1)[:, -1], pushed.levels, rtol=1e-10)

    def test_level_one_equals_holder(self):
        """Test (C, 1) and (H, 1) coincide"""
        values = np.random.default_rng(9).random(20000)
        holder = MeanCascade(order=1).extend(values)
        cesaro = CesaroCascade(order=1).extend(values)
        np.testing.assert_allclose(cesaro[1], holder[1], rtol=1e-12, atol=1e-15)


class TestIncrements:

    def test_small_sequence(self):
        """Test a_n for 0, 1, 1"""
        stream = ObservableStream.from_array([0.0, 1.0, 1.0])
        assert list(to_increments(stream)) == pytest.approx([0.0, 0.5, 1.0 / 6.0])

    def test_partial_sums_reproduce_means(self):
        """Test sum of a_1..a_n equals B_n"""
        values = np.random.default_rng(2).random(3000)
        increments = np.array(list(to_increments(ObservableStream.from_array(values))))
        means = np.cumsum(values) / np.arange(1, values.size + 1)
        np.testing.assert_allclose(np.cumsum(increments), means, rtol=1e-10)

    def test_empty_stream(self):
        """Test an empty stream is rejected"""
        with pytest.raises(InvalidInputError):
            list(to_increments(ObservableStream.from_array([])))


class TestLimitSets:

    def test_estimate_uses_tail(self):
        """Test the hull covers only the final window"""
        history = LevelHistory(0, np.arange(1, 2001), np.concatenate([np.full(1000, 5.0), np.linspace(0, 1, 1000)]))
        estimate = estimate_limit_set(history, window=0.5)
        assert estimate.lo == 0.0
        assert estimate.hi == 1.0
        assert estimate.window_start == 1001
        assert estimate.width == 1.0

    def test_too_few_samples(self):
        """Test short histories raise InsufficientDataError"""
        history = LevelHistory(0, np.arange(1, 11), np.zeros(10))
        with pytest.raises(InsufficientDataError):
            estimate_limit_set(history)

    def test_invalid_window(self):
        """Test windows outside (0, 1) are rejected"""
        history = LevelHistory(0, np.arange(1, 2001), np.zeros(2000))
        with pytest.raises(InvalidInputError):
            estimate_limit_set(history, window=1.0)

    def test_to_dict(self):
        """Test the JSON form of an interval"""
        estimate = LimitSetEstimate(window_start=10.0, lo=0.25, hi=0.75, level=2)
        assert estimate.to_dict() == {'k': 2, 'lo': 0.25, 'hi': 0.75, 'window_start': 10}

    def test_raw_envelope_cells(self):
        """Test per-cell min and max survive arbitrary chunk boundaries"""
        grid = np.array([2, 5, 6, 10])
        values = np.array([3.0, -1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0])
        envelope = RawEnvelope(grid)
        for start, stop in [(0, 3), (3, 4), (4, 9), (9, 10)]:
            envelope.update(start, values[start:stop])
        assert envelope.indices.tolist() == [2, 5, 6, 10]
        assert envelope.mins.tolist() == [-1.0, 1.0, 9.0, 2.0]
        assert envelope.maxs.tolist() == [3.0, 5.0, 9.0, 6.0]

    def test_nesting_violations(self):
        """Test a level sticking out of the one below is reported"""
        tower = IntervalTower([
            LimitSetEstimate(1.0, 0.0, 1.0, -1),
            LimitSetEstimate(1.0, 0.2, 0.8, 0),
            LimitSetEstimate(1.0, 0.1, 0.5, 1),
        ])
        assert tower.nesting_violations(1e-3) == [1]
        assert tower.top.level == 1
        with pytest.raises(InvalidInputError):
            tower.level(5)


class TestRunCascade:

    def test_finite_stream_shorter_than_n_max(self):
        """Test a finite stream runs to its end"""
        run = run_cascade(ObservableStream.from_array(np.ones(500)), 1000, order=2, grid_gamma=1.01)
        assert run.n == 500
        assert run.holder[0].indices[-1] == 500
        assert run.holder_final.levels == pytest.approx((1.0, 1.0, 1.0))

    def test_recorded_values_match_oracle(self):
        """Test grid-recorded values equal the full cascades at those indices"""
        values = np.random.default_rng(4).random(4000)
        run = run_cascade(ObservableStream.from_array(values), 4000, order=2, grid_gamma=1.01, chunk_size=300)
        positions = run.holder[0].indices - 1
        holder = holder_oracle(values, 2)
        cesaro = cesaro_oracle(values, 2)
        for k in range(3):
            np.testing.assert_allclose(run.holder[k].values, holder[k][positions], rtol=1e-10)
            np.testing.assert_allclose(run.cesaro[k].values, cesaro[k][positions], rtol=1e-10)

    def test_empty_stream(self):
        """Test a stream without terms raises"""
        with pytest.raises(InsufficientDataError):
            run_cascade(ObservableStream.from_array([]), 10)

    def test_history_csv(self):
        """Test the CSV layout of recorded histories"""
        run = run_cascade(ObservableStream.from_array([0.0, 1.0, 1.0]), 3, order=1, grid_gamma=2.0)
        lines = history_to_csv(run.holder).splitlines()
        assert lines[0] == 'index,level,value'
        assert lines[1:4] == ['1,0,0.0', '2,0,0.5', '3,0,0.6666666666666666']
        assert len(lines) == 7
        assert float(lines[-1].split(',')[2]) == pytest.approx(7.0 / 18.0)


class TestStreamingOracle:

    @pytest.mark.parametrize('family, cascade_cls, oracle', [
        ('holder', MeanCascade, holder_oracle),
        ('cesaro', CesaroCascade, cesaro_oracle),
    ])
    def test_random_streams(self, family, cascade_cls, oracle):
        """Test 100 streams of 10^4 terms fed in uneven chunks against the batch formulas"""
        for seed in range(100):
            rng = np.random.default_rng(seed)
            if seed % 2:
                values = rng.random(10 ** 4)
            else:
                values = (rng.random(10 ** 4) < 0.3).astype(np.float64)
            order = 1 + seed % 4
            cascade = cascade_cls(order=order, bound=1.0)
            cuts = np.sort(rng.choice(np.arange(1, values.size), size=12, replace=False))
            out = np.concatenate([cascade.extend(chunk) for chunk in np.split(values, cuts)], axis=1)
            np.testing.assert_allclose(out, oracle(values, order), rtol=1e-9, atol=1e-12, err_msg=f'{family} seed {seed}')


class TestHullProperty:

    @pytest.mark.parametrize('cascade_cls', [MeanCascade, CesaroCascade])
    def test_levels_inside_prefix_range(self, cascade_cls):
        """Test every level at n lies within the min and max of the first n values"""
        values = np.random.default_rng(11).uniform(-1.0, 3.0, size=20000)
        out = cascade_cls(order=4).extend(values)
        lo = np.minimum.accumulate(values)
        hi = np.maximum.accumulate(values)
        assert np.all(out >= lo - 1e-12)
        assert np.all(out <= hi + 1e-12)

    def test_example1_levels_inside_raw_hull(self, example1_run):
        """Test recorded levels of both families never leave [0, 1]"""
        for history in example1_run.holder + example1_run.cesaro:
            assert history.values.min() >= -1e-12
            assert history.values.max() <= 1.0 + 1e-12


class TestBlockEndMeans:

    def test_doubling_blocks_alternate(self):
        """Test averages at the ends of blocks 5..12 alternate above 0.6 and below 0.4"""
        spec, obs_map = builtin_spec('example1')
        values = obs_map.map_array(generate(spec, 2 ** 14 - 1))
        means = MeanCascade(order=0).extend(values)[0]
        for block in range(5, 13):
            end = 2 ** (block + 1) - 1
            if block % 2:
                assert means[end - 1] > 0.6
                assert means[end - 1] == pytest.approx(2.0 / 3.0)
            else:
                assert means[end - 1] < 0.4


class TestExample1Tower:

    def test_level0_hull(self, example1_run):
        """Test the doubling-block averages oscillate over about [1/3, 2/3]"""
        tower = build_tower(example1_run, 0.5, 'holder')
        assert tower.level(0).lo == pytest.approx(1.0 / 3.0, abs=0.02)
        assert tower.level(0).hi == pytest.approx(2.0 / 3.0, abs=0.02)
        assert tower.level(-1).lo == 0.0
        assert tower.level(-1).hi == 1.0

    @pytest.mark.parametrize('family', ['holder', 'cesaro'])
    def test_higher_levels_stay_open(self, example1_run, family):
        """Test levels 1 to 3 keep a visible oscillation"""
        tower = build_tower(example1_run, 0.5, family)
        for k, minimum in zip((1, 2, 3), (0.03, 0.005, 0.001)):
            assert tower.level(k).width > minimum

    def test_nesting(self, example1_run):
        """Test the tower over the final 35% of samples is nested"""
        tower = build_tower(example1_run, 0.35, 'holder')
        assert tower.nesting_violations(1e-3) == []

    def test_summary(self, example1_run):
        """Test the tower summary lists levels -1..K"""
        summary = tower_summary(example1_run, build_tower(example1_run))
        assert summary['n'] == 2 ** 20
        assert [level['k'] for level in summary['levels']] == [-1, 0, 1, 2, 3]


class TestExample2Tower:

    def test_level0_hull(self, example2_run):
        """Test the cumulative-block averages swing between about 0.09 and 0.90"""
        tower = build_tower(example2_run, 0.5, 'holder')
        assert tower.level(0).lo == pytest.approx(0.0901, abs=0.005)
        assert tower.level(0).hi == pytest.approx(0.9011, abs=0.005)


    def test_higher_levels(self, example2_run):
        """Test levels 1 to 3 stay open and nested"""
        tower = build_tower(example2_run, 0.5, 'holder')
        for k, minimum in zip((1, 2, 3), (0.2, 0.08, 0.03)):
            assert tower.level(k).width > minimum
        assert build_tower(example2_run, 0.35, 'holder').nesting_violations(1e-3) == []


class TestExample3Cascade:

    def test_level_one_converges(self):
        """Test H^(1) of the unbounded example settles although B oscillates"""
        run = run_cascade(example3_stream(), 2 * 10 ** 6, order=1)
        level0 = estimate_limit_set(run.holder[0], 0.25)
        level1 = estimate_limit_set(run.holder[1], 0.25)
        assert level0.width > 0.9
        assert level1.width < 0.02


if __name__ == '__main__':
    pytest.main([__file__])
