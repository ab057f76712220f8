"""Oscillation times, crossing subsequences and the quantitative bounds built on them.

All detection runs on grid-recorded level histories, so a detected index is
accurate to one grid step; every statement made downstream concerns ratios
of indices, which tolerate that error.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from birkhoff.errors import InsufficientDataError, InvalidEpsilonError, InvalidInputError
from birkhoff.means import LevelHistory

logger = logging.getLogger(__name__)

# Times below this index are discarded from bound checks
DEFAULT_MIN_TIME = 100

PARITY_HI = 'hi'
PARITY_LO = 'lo'


@dataclass
class RatioStats:
    """Summary of a ratio list used as a finite-sample limsup estimate"""

    count: int
    max_tail: float
    median: float
    trend: float

    def to_dict(self) -> Dict[str, Any]:
        return {'count': self.count, 'max_tail': self.max_tail, 'median': self.median, 'trend': self.trend}


def index_ratios(indices: np.ndarray) -> np.ndarray:
    """Consecutive ratios of increasing indices; inf/inf (log-only times) counts as inf"""
    indices = np.asarray(indices, dtype=np.float64)
    with np.errstate(invalid='ignore', over='ignore', divide='ignore'):
        ratios = indices[1:] / indices[:-1]
    return np.where(np.isnan(ratios), np.inf, ratios)


def ratio_stats(ratios: np.ndarray) -> RatioStats:
    """
    Args:
        ratios: consecutive index ratios, each > 1 for strictly increasing indices

    Returns:
        RatioStats with max over the final half (never below 1), median and the
        least-squares slope of log(ratio) against position
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0:
        return RatioStats(count=0, max_tail=1.0, median=1.0, trend=0.0)
    tail = ratios[ratios.size // 2:]
    trend = 0.0
    finite = np.isfinite(ratios)
    if finite.sum() >= 2:
        positions = np.arange(ratios.size, dtype=np.float64)[finite]
        trend = float(np.polyfit(positions, np.log(ratios[finite]), 1)[0])
    return RatioStats(
        count=int(ratios.size),
        max_tail=max(1.0, float(np.max(tail))),
        median=float(np.median(ratios)),
        trend=trend,
    )


@dataclass
class OscillationProfile:
    """Alternating approach times t_j with parity tags ('hi' for odd j, 'lo' for even j)"""

    times: np.ndarray
    parities: List[str]
    epsilon: Optional[float] = None
    alpha0: Optional[float] = None
    beta0: Optional[float] = None
    level: int = 0

    @property
    def ratios(self) -> np.ndarray:
        return index_ratios(self.times)

    def tail_ratios(self, min_time: float = DEFAULT_MIN_TIME) -> np.ndarray:
        """Ratios t_{j+1}/t_j for t_j >= min_time"""
        times = np.asarray(self.times, dtype=np.float64)
        keep = times[:-1] >= min_time
        return self.ratios[keep]

    def stats(self, min_time: float = DEFAULT_MIN_TIME) -> RatioStats:
        return ratio_stats(self.tail_ratios(min_time))

    def to_records(self) -> List[Dict[str, Any]]:
        ratios = self.ratios.tolist()
        records = []
        for j, (t, parity) in enumerate(zip(np.asarray(self.times).tolist(), self.parities), start=1):
            records.append({
                'j': j,
                't': t,
                'ratio': ratios[j - 1] if j - 1 < len(ratios) else None,
                'parity': parity,
            })
        return records


@dataclass
class CrossingProfile:
    """Grid indices n_i whose recorded value lies in (gamma - epsilon, gamma + epsilon)"""

    gamma: float
    epsilon: float
    indices: np.ndarray
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def ratios(self) -> np.ndarray:
        return index_ratios(self.indices)

    def __len__(self) -> int:
        return int(np.asarray(self.indices).size)

    def tail_ratios(self, min_time: float = DEFAULT_MIN_TIME) -> np.ndarray:
        """Ratios n_{i+1}/n_i for n_i >= min_time"""
        indices = np.asarray(self.indices, dtype=np.float64)
        return self.ratios[indices[:-1] >= min_time]

    def stats(self, min_time: float = DEFAULT_MIN_TIME) -> RatioStats:
        return ratio_stats(self.tail_ratios(min_time))

    def to_records(self) -> List[Dict[str, Any]]:
        ratios = self.ratios.tolist()
        records = []
        for j, (t, value) in enumerate(zip(np.asarray(self.indices).tolist(), np.asarray(self.values).tolist()), start=1):
            records.append({
                'j': j,
                't': t,
                'ratio': ratios[j - 1] if j - 1 < len(ratios) else None,
                'parity': PARITY_HI if value >= self.gamma else PARITY_LO,
            })
        return records


def detect_times(
    level_history: LevelHistory,
    alpha0: float,
    beta0: float,
    epsilon: float,
) -> OscillationProfile:
    """
    Alternating first passages: t_1 is the first index with value > beta0 - epsilon;
    even j take the first later index with value < alpha0 + epsilon, odd j the
    first later index with value > beta0 - epsilon.

    Raises:
        InvalidEpsilonError: beta0 - epsilon <= alpha0 + epsilon
        InsufficientDataError: fewer than two times found
    """
    if epsilon <= 0:
        raise InvalidEpsilonError(f"Epsilon must be positive, got {epsilon}")
    if beta0 - epsilon <= alpha0 + epsilon:
        raise InvalidEpsilonError(
            f"Epsilon {epsilon} too large for [{alpha0}, {beta0}]: need beta0 - eps > alpha0 + eps"
        )

    values = level_history.values
    hi_positions = np.flatnonzero(values > beta0 - epsilon)
    lo_positions = np.flatnonzero(values < alpha0 + epsilon)

    positions: List[int] = []
    parities: List[str] = []
    cursor = -1
    want_hi = True
    while True:
        candidates = hi_positions if want_hi else lo_positions
        k = int(np.searchsorted(candidates, cursor, side='right'))
        if k >= candidates.size:
            break
        cursor = int(candidates[k])
        positions.append(cursor)
        parities.append(PARITY_HI if want_hi else PARITY_LO)
        want_hi = not want_hi

    if len(positions) < 2:
        raise InsufficientDataError(
            f"Found {len(positions)} oscillation time(s) at level {level_history.level} with epsilon={epsilon}"
        )

    return OscillationProfile(
        times=level_history.indices[np.array(positions, dtype=np.int64)],
        parities=parities,
        epsilon=epsilon,
        alpha0=alpha0,
        beta0=beta0,
        level=level_history.level,
    )


def detect_crossings(level_history: LevelHistory, gamma: float, epsilon: float) -> CrossingProfile:
    """All recorded indices with |value - gamma| < epsilon; an empty profile is valid"""
    if epsilon <= 0:
        raise InvalidEpsilonError(f"Epsilon must be positive, got {epsilon}")
    if len(level_history) == 0:
        raise InvalidInputError("Cannot detect crossings on an empty history")
    mask = np.abs(level_history.values - gamma) < epsilon
    return CrossingProfile(
        gamma=gamma,
        epsilon=epsilon,
        indices=level_history.indices[mask],
        values=level_history.values[mask],
    )


def hardy_d_bound(alpha_m1: float, beta_m1: float, alpha0: float, beta0: float, epsilon: float) -> float:
    """
    Lower bound d on every tail ratio t_{j+1}/t_j:

        d = min{(beta0 - alpha_m1) / (alpha0 - alpha_m1 + 2 eps),
                (beta_m1 - alpha0) / (beta_m1 - beta0 + 2 eps)}
    """
    if not (alpha_m1 <= alpha0 < beta0 <= beta_m1):
        raise InvalidInputError(
            f"Need alpha_-1 <= alpha_0 < beta_0 <= beta_-1, got {alpha_m1}, {alpha0}, {beta0}, {beta_m1}"
        )
    if epsilon <= 0:
        raise InvalidEpsilonError(f"Epsilon must be positive, got {epsilon}")
    lower = (beta0 - alpha_m1) / (alpha0 - alpha_m1 + 2 * epsilon)
    upper = (beta_m1 - alpha0) / (beta_m1 - beta0 + 2 * epsilon)
    d = min(lower, upper)
    if d <= 1.0:
        raise InvalidEpsilonError(f"Epsilon {epsilon} leaves d = {d} <= 1")
    return d


def contraction_bound(D: float, width_below: float) -> float:
    """Largest width a level can keep when its oscillation ratios stay below D"""
    if D <= 1.0:
        raise InvalidInputError(f"Ratio bound D must exceed 1, got {D}")
    if width_below < 0:
        raise InvalidInputError(f"Width must be non-negative, got {width_below}")
    return (D - 1.0) / (D + 1.0) * width_below


def extremal_times(level_history: LevelHistory, previous: OscillationProfile) -> OscillationProfile:
    """
    Level-k extremal times from the level-(k-1) times.

    On [t_j, t_{j+1}) the level-k history takes its argmax when t_j is an upper
    approach and its argmin when it is a lower one; ties go to the smaller index.
    """
    indices = level_history.indices
    values = level_history.values
    times = np.asarray(previous.times)
    found: List[int] = []
    parities: List[str] = []
    for start, stop, parity in zip(times[:-1], times[1:], previous.parities):
        lo = int(np.searchsorted(indices, start, side='left'))
        hi = int(np.searchsorted(indices, stop, side='left'))
        if hi <= lo:
            continue
        segment = values[lo:hi]
        offset = int(np.argmax(segment)) if parity == PARITY_HI else int(np.argmin(segment))
        found.append(lo + offset)
        parities.append(parity)
    return OscillationProfile(
        times=indices[np.array(found, dtype=np.int64)] if found else np.empty(0, dtype=indices.dtype),
        parities=parities,
        level=level_history.level,
    )


def profile_to_jsonl(profile: Any) -> str:
    """One JSON record per detected time or crossing"""
    return ''.join(json.dumps(record) + '\n' for record in profile.to_records())
