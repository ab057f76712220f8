"""Streaming Birkhoff means and their Hölder and Cesàro cascades.

Both cascades keep O(K) state and consume numpy chunks; level histories are
decimated to a geometric index grid so that a run to 10^7 terms stores a few
thousand samples per level.
"""
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from birkhoff.errors import InsufficientDataError, InvalidInputError
from birkhoff.sequences import DEFAULT_CHUNK_SIZE, ObservableStream

logger = logging.getLogger(__name__)

DEFAULT_GRID_GAMMA = 1.001
DEFAULT_WINDOW = 0.5
MIN_LIMIT_SET_SAMPLES = 1000
MAX_ORDER = 8

# Relative slack when checking values against a declared bound
BOUND_TOLERANCE = 1e-12

FAMILIES = ('holder', 'cesaro')


class KahanSum:
    """Compensated running sum"""

    __slots__ = ('_sum', '_compensation')

    def __init__(self, value: float = 0.0):
        self._sum = float(value)
        self._compensation = 0.0

    def add(self, value: float) -> None:
        y = value - self._compensation
        t = self._sum + y
        self._compensation = (t - self._sum) - y
        self._sum = t

    @property
    def value(self) -> float:
        return self._sum - self._compensation


def geometric_grid(n_max: int, gamma: float = DEFAULT_GRID_GAMMA) -> np.ndarray:
    """
    Recording indices ceil(gamma^m) for m = 0, 1, ..., deduplicated, capped at n_max.

    The last grid index is always n_max.
    """
    if n_max < 1:
        raise InvalidInputError(f"n_max must be >= 1, got {n_max}")
    if gamma <= 1.0:
        raise InvalidInputError(f"Grid gamma must exceed 1, got {gamma}")
    m_max = int(math.ceil(math.log(n_max) / math.log(gamma))) + 1
    grid = np.unique(np.ceil(gamma ** np.arange(m_max + 1)).astype(np.int64))
    grid = grid[grid <= n_max]
    if grid[-1] != n_max:
        grid = np.append(grid, np.int64(n_max))
    return grid


def _check_values(values: np.ndarray, bound: Optional[float]) -> None:
    if not np.isfinite(values).all():
        raise InvalidInputError("Stream contains a non-finite value")
    if bound is not None and values.size:
        worst = float(np.max(np.abs(values)))
        if worst > bound * (1.0 + BOUND_TOLERANCE):
            raise InvalidInputError(f"Value {worst} exceeds declared bound {bound}")


@dataclass(frozen=True)
class CascadeSnapshot:
    """Immutable copy of a cascade's state"""

    family: str
    n: int
    levels: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family, 'n': self.n, 'levels': list(self.levels)}


class MeanCascade:
    """
    Streaming B_n = H_n^(0) and Hölder means H_n^(1..K).

    H_n^(k) = R_n^(k) / n with R_n^(k) = sum_{i<=n} H_i^(k-1), and H^(-1) the raw values.
    """

    family = 'holder'

    def __init__(self, order: int, bound: Optional[float] = None):
        if order < 0 or order > MAX_ORDER:
            raise InvalidInputError(f"Cascade order must be in [0, {MAX_ORDER}], got {order}")
        self.order = order
        self.bound = bound
        self.n = 0
        self.levels = np.zeros(order + 1, dtype=np.float64)
        self._sums = [KahanSum() for _ in range(order + 1)]

    def push(self, value: float) -> None:
        if not math.isfinite(value):
            raise InvalidInputError(f"Non-finite value {value} at n={self.n + 1}")
        if self.bound is not None and abs(value) > self.bound * (1.0 + BOUND_TOLERANCE):
            raise InvalidInputError(f"Value {value} exceeds declared bound {self.bound}")
        self.n += 1
        previous = float(value)
        for k in range(self.order + 1):
            self._sums[k].add(previous)
            self.levels[k] = self._sums[k].value / self.n
            previous = self.levels[k]

    def extend(self, values: np.ndarray) -> np.ndarray:
        """
        Consume a chunk of values.

        Returns:
            Array of shape (K+1, len(values)) with every level after each term
        """
        values = np.asarray(values, dtype=np.float64)
        _check_values(values, self.bound)
        out = np.empty((self.order + 1, values.size), dtype=np.float64)
        if values.size == 0:
            return out
        idx = np.arange(self.n + 1, self.n + values.size + 1, dtype=np.float64)
        previous = values
        for k in range(self.order + 1):
            out[k] = (self._sums[k].value + np.cumsum(previous)) / idx
            self._sums[k].add(float(np.sum(previous)))
            previous = out[k]
        self.n += values.size
        self.levels[:] = out[:, -1]
        return out

    def snapshot(self) -> CascadeSnapshot:
        return CascadeSnapshot(self.family, self.n, tuple(float(v) for v in self.levels))


class CesaroCascade:
    """
    Streaming Cesàro means C_n^(k) of the partial-mean sequence s_n = B_n.

    C_n^(k) = S_n^(k) / binom(n+k-1, k), updated as
    C_n^(k) = ((n-1) C_{n-1}^(k) + k C_n^(k-1)) / (n+k-1); S_n^(k) is never formed.
    Level 0 is B_n; level 1 coincides with the Hölder level 1.
    """

    family = 'cesaro'

    def __init__(self, order: int, bound: Optional[float] = None):
        if order < 0 or order > MAX_ORDER:
            raise InvalidInputError(f"Cascade order must be in [0, {MAX_ORDER}], got {order}")
        self.order = order
        self.bound = bound
        self.n = 0
        self.levels = np.zeros(order + 1, dtype=np.float64)
        self._sums = [KahanSum() for _ in range(min(order, 1) + 1)]

    def push(self, value: float) -> None:
        if not math.isfinite(value):
            raise InvalidInputError(f"Non-finite value {value} at n={self.n + 1}")
        if self.bound is not None and abs(value) > self.bound * (1.0 + BOUND_TOLERANCE):
            raise InvalidInputError(f"Value {value} exceeds declared bound {self.bound}")
        self.n += 1
        n = self.n
        previous = float(value)
        for k in range(len(self._sums)):
            self._sums[k].add(previous)
            self.levels[k] = self._sums[k].value / n
            previous = self.levels[k]
        for k in range(2, self.order + 1):
            self.levels[k] = ((n - 1) * self.levels[k] + k * self.levels[k - 1]) / (n + k - 1)

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Chunk update; same return shape as MeanCascade.extend"""
        values = np.asarray(values, dtype=np.float64)
        _check_values(values, self.bound)
        out = np.empty((self.order + 1, values.size), dtype=np.float64)
        start = 0
        if values.size and self.n == 0:
            self.push(float(values[0]))
            out[:, 0] = self.levels
            start = 1
        # Sub-blocks no longer than n keep the running products above 2^-K
        while start < values.size:
            size = min(values.size - start, max(self.n, 1))
            out[:, start:start + size] = self._extend_block(values[start:start + size])
            start += size
        return out

    def _extend_block(self, values: np.ndarray) -> np.ndarray:
        size = values.size
        n0 = self.n
        idx = np.arange(n0 + 1, n0 + size + 1, dtype=np.float64)
        out = np.empty((self.order + 1, size), dtype=np.float64)
        previous = values
        for k in range(len(self._sums)):
            out[k] = (self._sums[k].value + np.cumsum(previous)) / idx
            self._sums[k].add(float(np.sum(previous)))
            previous = out[k]
        for k in range(2, self.order + 1):
            a = (idx - 1.0) / (idx + k - 1.0)
            b = k / (idx + k - 1.0)
            products = np.cumprod(a)
            out[k] = products * (self.levels[k] + np.cumsum(b * out[k - 1] / products))
        self.n += size
        self.levels[:] = out[:, -1]
        return out

    def snapshot(self) -> CascadeSnapshot:
        return CascadeSnapshot(self.family, self.n, tuple(float(v) for v in self.levels))


def to_increments(phi_stream: ObservableStream, limit: Optional[int] = None) -> Iterator[float]:
    """
    The a_n transformation: a_1 = phi(x_0), a_n = (phi(x_{n-1}) - B_{n-1}) / n.

    Partial sums of the yielded a_n reproduce B_n.

    Raises:
        InvalidInputError: empty stream
    """
    total = KahanSum()
    n = 0
    for chunk in phi_stream.chunks(limit):
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.size == 0:
            continue
        idx = np.arange(n + 1, n + chunk.size + 1, dtype=np.float64)
        running = total.value + np.cumsum(chunk)
        previous_means = np.empty(chunk.size, dtype=np.float64)
        previous_means[0] = total.value / n if n else 0.0
        previous_means[1:] = running[:-1] / idx[:-1]
        increments = (chunk - previous_means) / idx
        if n == 0:
            increments[0] = chunk[0]
        total.add(float(np.sum(chunk)))
        n += chunk.size
        yield from increments.tolist()
    if n == 0:
        raise InvalidInputError("to_increments needs a nonempty stream")


@dataclass
class LevelHistory:
    """Values of one cascade level sampled on an index grid"""

    level: int
    indices: np.ndarray
    values: np.ndarray
    family: str = 'holder'

    def __len__(self) -> int:
        return int(self.values.size)

    def tail(self, window: float) -> Tuple[np.ndarray, np.ndarray]:
        """Final `window` fraction of the samples (at least one)"""
        count = max(1, int(math.ceil(window * self.values.size)))
        return self.indices[-count:], self.values[-count:]


@dataclass(frozen=True)
class LimitSetEstimate:
    """Tail hull [lo, hi] of one level; level -1 is the raw observable"""

    window_start: float
    lo: float
    hi: float
    level: int

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_dict(self) -> Dict[str, Any]:
        start = int(self.window_start) if float(self.window_start).is_integer() else self.window_start
        return {'k': self.level, 'lo': self.lo, 'hi': self.hi, 'window_start': start}


def estimate_limit_set(
    level_history: LevelHistory,
    window: float = DEFAULT_WINDOW,
    min_samples: int = MIN_LIMIT_SET_SAMPLES,
) -> LimitSetEstimate:
    """
    Estimate [alpha_k, beta_k] as the min and max over the final `window` of samples.

    Raises:
        InvalidInputError: window outside (0, 1)
        InsufficientDataError: fewer than min_samples samples
    """
    if not 0.0 < window < 1.0:
        raise InvalidInputError(f"Window must lie in (0, 1), got {window}")
    if len(level_history) < min_samples:
        raise InsufficientDataError(
            f"Level {level_history.level} has {len(level_history)} samples, need {min_samples}"
        )
    indices, values = level_history.tail(window)
    return LimitSetEstimate(
        window_start=float(indices[0]),
        lo=float(np.min(values)),
        hi=float(np.max(values)),
        level=level_history.level,
    )


class RawEnvelope:
    """Per-grid-cell min and max of the raw observable, the level -1 record"""

    def __init__(self, grid: np.ndarray):
        self.grid = grid
        self._next = 0
        self._pending_min = math.inf
        self._pending_max = -math.inf
        self._indices: List[np.ndarray] = []
        self._mins: List[np.ndarray] = []
        self._maxs: List[np.ndarray] = []

    def update(self, start: int, values: np.ndarray) -> None:
        """Fold values at 1-based positions start+1 .. start+len(values)"""
        size = values.size
        if size == 0:
            return
        stop = int(np.searchsorted(self.grid, start + size, side='right'))
        cuts = self.grid[self._next:stop] - start
        self._next = stop
        starts = np.concatenate(([0], cuts))
        starts = starts[starts < size]
        seg_mins = np.minimum.reduceat(values, starts)
        seg_maxs = np.maximum.reduceat(values, starts)
        closed = cuts.size
        if closed:
            mins = seg_mins[:closed].copy()
            maxs = seg_maxs[:closed].copy()
            mins[0] = min(mins[0], self._pending_min)
            maxs[0] = max(maxs[0], self._pending_max)
            self._indices.append(cuts + start)
            self._mins.append(mins)
            self._maxs.append(maxs)
            self._pending_min = math.inf
            self._pending_max = -math.inf
        if starts.size > closed:
            self._pending_min = min(self._pending_min, float(seg_mins[-1]))
            self._pending_max = max(self._pending_max, float(seg_maxs[-1]))

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate(self._indices) if self._indices else np.empty(0, dtype=np.int64)

    @property
    def mins(self) -> np.ndarray:
        return np.concatenate(self._mins) if self._mins else np.empty(0)

    @property
    def maxs(self) -> np.ndarray:
        return np.concatenate(self._maxs) if self._maxs else np.empty(0)

    def estimate(self, window: float = DEFAULT_WINDOW, min_samples: int = MIN_LIMIT_SET_SAMPLES) -> LimitSetEstimate:
        if not 0.0 < window < 1.0:
            raise InvalidInputError(f"Window must lie in (0, 1), got {window}")
        mins = self.mins
        if mins.size < min_samples:
            raise InsufficientDataError(f"Raw envelope has {mins.size} cells, need {min_samples}")
        count = max(1, int(math.ceil(window * mins.size)))
        return LimitSetEstimate(
            window_start=float(self.indices[-count]),
            lo=float(np.min(mins[-count:])),
            hi=float(np.max(self.maxs[-count:])),
            level=-1,
        )


@dataclass
class CascadeRun:
    """Everything recorded by one pass over a stream"""

    name: str
    n: int
    order: int
    grid_gamma: float
    bound: Optional[float]
    holder: List[LevelHistory]
    cesaro: List[LevelHistory]
    envelope: RawEnvelope
    holder_final: CascadeSnapshot
    cesaro_final: CascadeSnapshot

    def histories(self, family: str) -> List[LevelHistory]:
        if family not in FAMILIES:
            raise InvalidInputError(f"Unknown cascade family '{family}'")
        return self.holder if family == 'holder' else self.cesaro


def run_cascade(
    stream: ObservableStream,
    n_max: int,
    order: int = 3,
    grid_gamma: float = DEFAULT_GRID_GAMMA,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> CascadeRun:
    """
    Drive both cascades over the first n_max terms and record grid histories.

    Args:
        stream: observable stream; finite streams shorter than n_max are run to their end
        n_max: number of terms
        order: highest cascade level K
        grid_gamma: ratio of the geometric recording grid
        chunk_size: terms per numpy chunk

    Returns:
        CascadeRun with Hölder and Cesàro histories for levels 0..K and the raw envelope
    """
    n = stream.resolve_length(n_max)
    if n < 1:
        raise InsufficientDataError(f"Stream '{stream.name}' produced no terms")
    if n < n_max:
        logger.warning(f"Stream '{stream.name}' ends after {n} terms, short of n_max={n_max}")

    grid = geometric_grid(n, grid_gamma)
    holder = MeanCascade(order, stream.bound)
    cesaro = CesaroCascade(order, stream.bound)
    envelope = RawEnvelope(grid)
    holder_rows: List[np.ndarray] = []
    cesaro_rows: List[np.ndarray] = []

    consumed = 0
    next_grid = 0
    for chunk in stream.chunks(n, chunk_size):
        chunk = np.asarray(chunk, dtype=np.float64)
        holder_levels = holder.extend(chunk)
        cesaro_levels = cesaro.extend(chunk)
        envelope.update(consumed, chunk)
        stop = int(np.searchsorted(grid, consumed + chunk.size, side='right'))
        positions = grid[next_grid:stop] - consumed - 1
        holder_rows.append(holder_levels[:, positions])
        cesaro_rows.append(cesaro_levels[:, positions])
        next_grid = stop
        consumed += chunk.size

    holder_matrix = np.concatenate(holder_rows, axis=1)
    cesaro_matrix = np.concatenate(cesaro_rows, axis=1)
    recorded = grid[:holder_matrix.shape[1]]

    logger.info(f"Cascade over '{stream.name}' finished: n={consumed}, K={order}, {recorded.size} grid samples")

    return CascadeRun(
        name=stream.name,
        n=consumed,
        order=order,
        grid_gamma=grid_gamma,
        bound=stream.bound,
        holder=[LevelHistory(k, recorded, holder_matrix[k], 'holder') for k in range(order + 1)],
        cesaro=[LevelHistory(k, recorded, cesaro_matrix[k], 'cesaro') for k in range(order + 1)],
        envelope=envelope,
        holder_final=holder.snapshot(),
        cesaro_final=cesaro.snapshot(),
    )


@dataclass
class IntervalTower:
    """Limit-set estimates for k = -1, 0, ..., K"""

    intervals: List[LimitSetEstimate] = field(default_factory=list)
    family: str = 'holder'

    def level(self, k: int) -> LimitSetEstimate:
        for interval in self.intervals:
            if interval.level == k:
                return interval
        raise InvalidInputError(f"Tower has no level {k}")

    @property
    def top(self) -> LimitSetEstimate:
        return self.intervals[-1]

    def nesting_violations(self, slack: float = 1e-3) -> List[int]:
        """Levels k whose interval is not inside level k-1 up to slack"""
        violations = []
        for below, above in zip(self.intervals, self.intervals[1:]):
            if above.lo < below.lo - slack or above.hi > below.hi + slack:
                violations.append(above.level)
        return violations

    def to_list(self) -> List[Dict[str, Any]]:
        return [interval.to_dict() for interval in self.intervals]


def build_tower(
    run: CascadeRun,
    window: float = DEFAULT_WINDOW,
    family: str = 'holder',
    min_samples: int = MIN_LIMIT_SET_SAMPLES,
) -> IntervalTower:
    intervals = [run.envelope.estimate(window, min_samples)]
    intervals.extend(estimate_limit_set(history, window, min_samples) for history in run.histories(family))
    tower = IntervalTower(intervals, family)
    violations = tower.nesting_violations()
    if violations:
        logger.warning(f"Tower for '{run.name}' ({family}) violates nesting at levels {violations}")
    return tower


def tower_summary(run: CascadeRun, tower: IntervalTower) -> Dict[str, Any]:
    """JSON summary {"n", "levels": [{"k", "lo", "hi"}]}"""
    return {
        'n': run.n,
        'family': tower.family,
        'levels': [{'k': t.level, 'lo': t.lo, 'hi': t.hi} for t in tower.intervals],
    }


def history_to_csv(histories: List[LevelHistory]) -> str:
    """CSV with header index,level,value for every recorded sample"""
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(['index', 'level', 'value'])
    for history in histories:
        for index, value in zip(history.indices.tolist(), history.values.tolist()):
            writer.writerow([index, history.level, repr(float(value))])
    return output.getvalue()
