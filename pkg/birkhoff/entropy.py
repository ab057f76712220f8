"""Cylinder counting for alternating-average constraint schedules on the full m-shift.

A word of length n is admissible when every completed block has empirical
mean strictly within epsilon of its target (alpha1 on odd blocks, alpha2 on
even ones) and the unfinished last block can still be completed that way.
Counts are exact big integers; membership is decided in exact rationals.
"""
import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement, product
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from birkhoff.errors import FeasibilityError, InvalidInputError
from birkhoff.sequences import ObservableStream

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 10 ** 6
BRUTE_FORCE_LIMIT = 16


def _exact(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    return Fraction(str(value))


@dataclass
class ConstraintSchedule:
    """
    Blocks n_1 = N, n_i = i * (n_1 + ... + n_{i-1}); odd blocks target alpha1,
    even blocks alpha2, all with tolerance epsilon.
    """

    N: int
    alpha1: float
    alpha2: float
    epsilon: float
    alphabet_size: int = 2

    def __post_init__(self):
        if self.N < 1:
            raise InvalidInputError(f"N must be >= 1, got {self.N}")
        if self.alphabet_size < 2:
            raise InvalidInputError(f"alphabet_size must be >= 2, got {self.alphabet_size}")
        a1, a2, eps = _exact(self.alpha1), _exact(self.alpha2), _exact(self.epsilon)
        if eps <= 0:
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")
        if a1 > a2:
            raise InvalidInputError(f"alpha1 must not exceed alpha2, got {self.alpha1} > {self.alpha2}")
        if a1 < a2 and eps > (a2 - a1) / 4:
            raise InvalidInputError(
                f"epsilon {self.epsilon} exceeds (alpha2 - alpha1)/4 = {float((a2 - a1) / 4)}"
            )

    @property
    def exact_targets(self) -> Tuple[Fraction, Fraction]:
        return _exact(self.alpha1), _exact(self.alpha2)

    @property
    def exact_epsilon(self) -> Fraction:
        return _exact(self.epsilon)

    def target(self, block: int) -> Fraction:
        """Target mean of the 1-based block index"""
        a1, a2 = self.exact_targets
        return a1 if block % 2 == 1 else a2

    def block_lengths(self) -> Iterator[int]:
        total = 0
        i = 1
        while True:
            length = self.N if i == 1 else i * total
            yield length
            total += length
            i += 1

    def blocks_covering(self, n: int) -> List[Tuple[int, int, int]]:
        """(1-based block index, start, length) for every block meeting positions 0..n-1"""
        blocks = []
        start = 0
        for i, length in enumerate(self.block_lengths(), start=1):
            if start >= n:
                break
            blocks.append((i, start, length))
            start += length
        return blocks

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ConstraintSchedule':
        known = {'N', 'alpha1', 'alpha2', 'epsilon', 'alphabet_size'}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"Unknown schedule keys: {sorted(unknown)}")
        missing = {'N', 'alpha1', 'alpha2', 'epsilon'} - set(doc)
        if missing:
            raise InvalidInputError(f"Missing schedule keys: {sorted(missing)}")
        return cls(**doc)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'N': self.N,
            'alpha1': self.alpha1,
            'alpha2': self.alpha2,
            'epsilon': self.epsilon,
            'alphabet_size': self.alphabet_size,
        }


@dataclass(frozen=True)
class CylinderCount:
    n: int
    count: int

    @property
    def log_count(self) -> float:
        return math.log(self.count)

    @property
    def rate(self) -> float:
        return self.log_count / self.n


class _ScaledObservable:
    """Observable values scaled to integers by the common denominator"""

    def __init__(self, schedule: ConstraintSchedule, observable: Optional[Dict[int, Any]]):
        if observable is None:
            observable = {s: s for s in range(schedule.alphabet_size)}
        symbols = sorted(observable)
        if len(symbols) != schedule.alphabet_size:
            raise InvalidInputError(
                f"Observable has {len(symbols)} symbols, alphabet size is {schedule.alphabet_size}"
            )
        exact = {s: _exact(observable[s]) for s in symbols}
        self.scale = math.lcm(*(v.denominator for v in exact.values()))
        self.symbols = symbols
        self.exact = exact
        self.values = [int(exact[s] * self.scale) for s in symbols]
        self.schedule = schedule
        self._reachable: Dict[int, np.ndarray] = {0: np.array([0], dtype=np.int64)}

    def bounds(self, block: int, length: int) -> Tuple[int, int]:
        """Closed integer range of admissible scaled block sums: |S - alpha L scale| < eps L scale"""
        centre = self.schedule.target(block) * length * self.scale
        radius = self.schedule.exact_epsilon * length * self.scale
        lo, hi = centre - radius, centre + radius
        return math.floor(lo) + 1, math.ceil(hi) - 1

    def reachable(self, r: int, max_states: int) -> np.ndarray:
        """Sorted scaled sums attainable by r symbols"""
        if r not in self._reachable:
            span = r * (max(self.values) - min(self.values))
            if span > max_states:
                raise FeasibilityError(
                    f"Completion check for {r} remaining symbols needs {span} sums; reduce n or coarsen the schedule"
                )
            known = max(k for k in self._reachable if k < r)
            sums = self._reachable[known]
            for step in range(known + 1, r + 1):
                sums = np.unique(np.concatenate([sums + v for v in self.values]))
                self._reachable[step] = sums
        return self._reachable[r]


def _iter_counts(
    schedule: ConstraintSchedule,
    n_max: int,
    observable: Optional[Dict[int, Any]],
    max_states: int,
) -> Iterator[CylinderCount]:
    if n_max < 1:
        raise InvalidInputError(f"n must be >= 1, got {n_max}")
    scaled = _ScaledObservable(schedule, observable)
    carried = 1
    n = 0
    for block, _, length in schedule.blocks_covering(n_max):
        lo, hi = scaled.bounds(block, length)
        states: Dict[int, int] = {0: carried}
        for position in range(1, length + 1):
            if n == n_max:
                return
            following: Dict[int, int] = defaultdict(int)
            for s, c in states.items():
                for v in scaled.values:
                    following[s + v] += c
            states = following
            if len(states) > max_states:
                raise FeasibilityError(f"DP holds {len(states)} states at n={n + 1}; reduce n or coarsen the schedule")
            n += 1
            if position == length:
                carried = sum(c for s, c in states.items() if lo <= s <= hi)
                count = carried
            else:
                tails = scaled.reachable(length - position, max_states)
                count = 0
                for s, c in states.items():
                    k = int(np.searchsorted(tails, lo - s, side='left'))
                    if k < tails.size and tails[k] <= hi - s:
                        count += c
            if count == 0:
                raise FeasibilityError(f"Schedule admits no words of length {n}")
            yield CylinderCount(n=n, count=count)


def count_cylinders(
    schedule: ConstraintSchedule,
    n: int,
    observable: Optional[Dict[int, Any]] = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> CylinderCount:
    """
    Exact number of admissible length-n words.

    Args:
        schedule: constraint schedule
        n: word length
        observable: symbol -> rational value; defaults to the identity on 0..m-1
        max_states: bound on DP states and completion sums

    Raises:
        FeasibilityError: state space too large, or no admissible word
    """
    last = None
    for last in _iter_counts(schedule, n, observable, max_states):
        pass
    return last


@dataclass
class GrowthReport:
    schedule: ConstraintSchedule
    counts: List[CylinderCount]
    log_m: float
    targets: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    def to_csv(self) -> str:
        output = io.StringIO()
        writer = csv.writer(output, lineterminator='\n')
        writer.writerow(['n', 'count', 'log_count', 'rate'])
        for c in self.counts:
            writer.writerow([c.n, c.count, repr(c.log_count), repr(c.rate)])
        return output.getvalue()

    def summary(self) -> Dict[str, Any]:
        final = self.counts[-1]
        return {
            'schedule': self.schedule.to_dict(),
            'n_max': final.n,
            'final_rate': final.rate,
            'log_m': self.log_m,
            'targets': self.targets,
        }


def bernoulli_entropy(p: float) -> float:
    """-p log p - (1-p) log(1-p), natural log, 0 log 0 = 0"""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"p must lie in [0, 1], got {p}")
    return -sum(q * math.log(q) for q in (p, 1.0 - p) if q > 0)


def _bernoulli_targets(schedule: ConstraintSchedule, observable: Optional[Dict[int, Any]]) -> Dict[str, Dict[str, Optional[float]]]:
    if schedule.alphabet_size != 2:
        return {}
    values = observable or {0: 0, 1: 1}
    v0, v1 = (float(values[s]) for s in sorted(values))
    targets = {}
    for name, alpha in (('alpha1', schedule.alpha1), ('alpha2', schedule.alpha2)):
        p = (float(alpha) - v0) / (v1 - v0) if v1 != v0 else None
        h = bernoulli_entropy(p) if p is not None and 0.0 <= p <= 1.0 else None
        targets[name] = {'alpha': float(alpha), 'p': p, 'h': h}
    return targets


def growth_rate_report(
    schedule: ConstraintSchedule,
    n_max: int,
    observable: Optional[Dict[int, Any]] = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> GrowthReport:
    """Counts and rates for n = 1..n_max in one DP pass"""
    counts = list(_iter_counts(schedule, n_max, observable, max_states))
    report = GrowthReport(
        schedule=schedule,
        counts=counts,
        log_m=math.log(schedule.alphabet_size),
        targets=_bernoulli_targets(schedule, observable),
    )
    logger.info(f"Growth report to n={n_max}: final rate {counts[-1].rate:.6f} vs log m {report.log_m:.6f}")
    return report


def brute_force_count(
    schedule: ConstraintSchedule,
    n: int,
    observable: Optional[Dict[int, Any]] = None,
) -> CylinderCount:
    """Enumerate all m^n words; completions of the last block are enumerated as multisets"""
    if not 1 <= n <= BRUTE_FORCE_LIMIT:
        raise InvalidInputError(f"Brute force supports 1 <= n <= {BRUTE_FORCE_LIMIT}, got {n}")
    if observable is None:
        observable = {s: s for s in range(schedule.alphabet_size)}
    symbols = sorted(observable)
    exact = {s: _exact(observable[s]) for s in symbols}
    eps = schedule.exact_epsilon
    blocks = schedule.blocks_covering(n)

    completions: Dict[int, set] = {}

    def completion_sums(r: int) -> set:
        if r not in completions:
            completions[r] = {sum(combo, Fraction(0)) for combo in combinations_with_replacement(exact.values(), r)}
        return completions[r]

    count = 0
    for word in product(symbols, repeat=n):
        admissible = True
        for block, start, length in blocks:
            total = sum((exact[s] for s in word[start:min(start + length, n)]), Fraction(0))
            target = schedule.target(block)
            if start + length <= n:
                admissible = abs(total / length - target) < eps
            else:
                admissible = any(abs((total + t) / length - target) < eps for t in completion_sums(start + length - n))
            if not admissible:
                break
        if admissible:
            count += 1
    if count == 0:
        raise FeasibilityError(f"Schedule admits no words of length {n}")
    return CylinderCount(n=n, count=count)


def bernoulli_stream(p: float, seed: int = 0, values: Tuple[float, float] = (-1.0, 1.0)) -> ObservableStream:
    """i.i.d. stream taking values[1] with probability p; every pass replays the same seed"""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"p must lie in [0, 1], got {p}")
    low, high = float(values[0]), float(values[1])

    def source(n: int, chunk_size: int) -> Iterator[np.ndarray]:
        rng = np.random.default_rng(seed)
        for start in range(0, n, chunk_size):
            draws = rng.random(min(chunk_size, n - start))
            yield np.where(draws < p, high, low)

    return ObservableStream(source, length=None, bound=max(abs(low), abs(high)), name=f'bernoulli:{p}')
