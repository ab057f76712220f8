"""B1 / B2 classification of divergent Birkhoff averages.

The convergence check comes first. After it, B1 criteria (a tower shrunk to
a point at level K, bounded crossing ratios for every gamma, bounded
oscillation ratios) are weighed against B2 criteria (the nondecreasing-hull
fast path, growing crossing ratios for every gamma). One side alone decides
the label; both sides, or neither, give Inconclusive. Every comparison is
kept as Evidence so a verdict can be audited threshold by threshold.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from birkhoff.bowen import SegmentSeries, flow_average_at_events
from birkhoff.errors import BirkhoffError, InsufficientDataError, InvalidInputError
from birkhoff.means import (
    DEFAULT_GRID_GAMMA,
    CascadeRun,
    IntervalTower,
    LevelHistory,
    LimitSetEstimate,
    build_tower,
    estimate_limit_set,
    run_cascade,
)
from birkhoff.oscillation import (
    OscillationProfile,
    contraction_bound,
    detect_crossings,
    detect_times,
    extremal_times,
)
from birkhoff.sequences import ObservableStream

logger = logging.getLogger(__name__)

MIN_CLASSIFY_TERMS = 10 ** 4
MIN_EVENT_SAMPLES = 4
MIN_B1_RATIOS = 4


class Label(str, Enum):
    CONVERGENT = 'Convergent'
    B1 = 'B1'
    B2 = 'B2'
    INCONCLUSIVE = 'Inconclusive'


@dataclass
class ClassifierConfig:
    """
    Finite-sample thresholds. None means "derive from the measured tower":

        epsilon        0.05 * (beta_0 - alpha_0)
        delta_conv     0.01 * 2M, or 0.01 * 2 max(|alpha_0|, |beta_0|) without a bound
        delta_point    0.02 * (beta_0 - alpha_0)
        fastpath_slack delta_nest
    """

    order: int = 3
    gamma_grid: int = 9
    epsilon: Optional[float] = None
    ratio_bound_D: float = 8.0
    growth_factor: float = 5.0
    window: float = 0.35
    convergence_window: float = 0.1
    delta_conv: Optional[float] = None
    delta_point: Optional[float] = None
    delta_nest: float = 1e-3
    fastpath_slack: Optional[float] = None
    epsilon_multipliers: Tuple[float, ...] = (1.0, 0.5)
    min_time: float = 100.0
    grid_gamma: float = DEFAULT_GRID_GAMMA

    def __post_init__(self):
        if self.order < 1:
            raise InvalidInputError(f"Classifier order K must be >= 1, got {self.order}")
        if self.gamma_grid < 3:
            raise InvalidInputError(f"gamma_grid must be >= 3, got {self.gamma_grid}")
        if self.ratio_bound_D <= 1.0:
            raise InvalidInputError(f"ratio_bound_D must exceed 1, got {self.ratio_bound_D}")
        if self.growth_factor <= 1.0:
            raise InvalidInputError(f"growth_factor must exceed 1, got {self.growth_factor}")
        if not self.epsilon_multipliers:
            raise InvalidInputError("epsilon_multipliers must not be empty")
        self.epsilon_multipliers = tuple(float(m) for m in self.epsilon_multipliers)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ClassifierConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"Unknown classifier config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['epsilon_multipliers'] = list(self.epsilon_multipliers)
        return doc


@dataclass
class Evidence:
    criterion: str
    statistic: float
    threshold: float
    fired: bool
    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    note: str = ''

    def to_dict(self) -> Dict[str, Any]:
        return {
            'criterion': self.criterion,
            'gamma': self.gamma,
            'epsilon': self.epsilon,
            'statistic': _json_float(self.statistic),
            'threshold': _json_float(self.threshold),
            'fired': self.fired,
            'note': self.note,
        }


def _json_float(value: float) -> Any:
    if value is None:
        return None
    value = float(value)
    if np.isfinite(value):
        return value
    return 'inf' if value > 0 else ('-inf' if value < 0 else 'nan')


@dataclass
class Verdict:
    label: Label
    tower: IntervalTower
    evidence: List[Evidence] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    n: Optional[int] = None
    name: str = ''

    def fired(self, criterion: str) -> List[Evidence]:
        return [e for e in self.evidence if e.criterion == criterion and e.fired]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'label': self.label.value,
            'name': self.name,
            'n': self.n,
            'tower': self.tower.to_list(),
            'evidence': [e.to_dict() for e in self.evidence],
            'notes': list(self.notes),
        }


def nondecreasing_fastpath(tower: IntervalTower, slack: float) -> Optional[List[Evidence]]:
    """
    B2 evidence when the level-0 hull matches the raw hull within slack.

    Levels 1..K are checked against the same hull within 3*slack; those checks
    are recorded but never trigger.
    """
    raw = tower.level(-1)
    level0 = tower.level(0)
    gap = max(abs(level0.lo - raw.lo), abs(level0.hi - raw.hi))
    if gap > slack:
        return None
    evidence = [Evidence('nondecreasing', statistic=gap, threshold=slack, fired=True)]
    for interval in tower.intervals:
        if interval.level < 1:
            continue
        level_gap = max(abs(interval.lo - raw.lo), abs(interval.hi - raw.hi))
        evidence.append(Evidence(
            f'nondecreasing_level_{interval.level}',
            statistic=level_gap,
            threshold=3 * slack,
            fired=level_gap <= 3 * slack,
            note='consistency check',
        ))
    return evidence


def b1_sufficient(profile: OscillationProfile, D: float, min_time: float = 100.0) -> Optional[Evidence]:
    """B1 evidence when at least four tail ratios t_{j+1}/t_j exist and all stay <= D"""
    ratios = profile.tail_ratios(min_time)
    if ratios.size < MIN_B1_RATIOS:
        return None
    statistic = float(np.max(ratios))
    if statistic > D:
        return None
    return Evidence(
        'b1_bounded_times',
        statistic=statistic,
        threshold=D,
        fired=True,
        epsilon=profile.epsilon,
        note=f'implied level-1 ratio bound D^2 = {D * D:g}',
    )


def growth_statistic(ratios: np.ndarray) -> float:
    """Largest ratio over the median ratio; inf when a log-only time is involved"""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0:
        return 1.0
    if not np.all(np.isfinite(ratios)):
        return float('inf')
    return float(np.max(ratios) / np.median(ratios))


def classify(stream: ObservableStream, n_max: int, config: Optional[ClassifierConfig] = None) -> Verdict:
    """
    Run the cascade to n_max and classify the stream.

    Raises:
        InsufficientDataError: n_max below 10^4
    """
    config = config or ClassifierConfig()
    if n_max < MIN_CLASSIFY_TERMS:
        raise InsufficientDataError(f"classify needs n_max >= {MIN_CLASSIFY_TERMS}, got {n_max}")
    run = run_cascade(stream, n_max, order=config.order, grid_gamma=config.grid_gamma)
    return classify_run(run, config)


def classify_run(run: CascadeRun, config: Optional[ClassifierConfig] = None) -> Verdict:
    """Classify an already computed cascade run"""
    config = config or ClassifierConfig()
    tower = build_tower(run, config.window, 'holder')
    level0 = run.holder[0]
    convergence = estimate_limit_set(level0, config.convergence_window)
    return _decide(
        name=run.name,
        n=run.n,
        tower=tower,
        level0=level0,
        convergence=convergence,
        bound=run.bound,
        config=config,
        higher=run.holder[1:3],
    )


def classify_events(series: SegmentSeries, config: Optional[ClassifierConfig] = None) -> Verdict:
    """
    Classify a flow from its exact averages at segment boundaries.

    Event times serve as indices; the tower has levels -1 and 0 only.
    """
    config = config or ClassifierConfig()
    events = flow_average_at_events(series)
    times = np.array([event.time for event in events], dtype=np.float64)
    averages = np.array([event.average for event in events], dtype=np.float64)
    raw_values = np.array([segment.value for segment in series.segments], dtype=np.float64)

    level0 = LevelHistory(0, times, averages, 'flow')
    raw_hull = LimitSetEstimate(
        window_start=float(times[0]),
        lo=float(np.min(raw_values)),
        hi=float(np.max(raw_values)),
        level=-1,
    )
    tower = IntervalTower(
        [
            raw_hull,
            estimate_limit_set(level0, config.window, MIN_EVENT_SAMPLES),
        ],
        family='flow',
    )
    bound = float(np.max(np.abs(raw_values)))
    return _decide(
        name=series.name,
        n=len(events),
        tower=tower,
        level0=level0,
        convergence=tower.level(0),
        bound=bound,
        config=config,
        higher=[],
    )


def _decide(
    name: str,
    n: int,
    tower: IntervalTower,
    level0: LevelHistory,
    convergence: LimitSetEstimate,
    bound: Optional[float],
    config: ClassifierConfig,
    higher: List[LevelHistory],
) -> Verdict:
    evidence: List[Evidence] = []
    notes: List[str] = []
    raw = tower.level(-1)
    top = tower.top
    alpha0, beta0 = tower.level(0).lo, tower.level(0).hi
    width0 = beta0 - alpha0

    if bound is not None:
        span = 2.0 * bound
    else:
        span = 2.0 * max(abs(alpha0), abs(beta0))
    delta_conv = config.delta_conv if config.delta_conv is not None else 0.01 * (span or 1.0)
    delta_point = config.delta_point if config.delta_point is not None else 0.02 * width0
    slack = config.fastpath_slack if config.fastpath_slack is not None else config.delta_nest

    converged = convergence.width < delta_conv
    evidence.append(Evidence('convergence', statistic=convergence.width, threshold=delta_conv, fired=converged))
    if converged:
        return _finish(Verdict(Label.CONVERGENT, tower, evidence, notes, n, name))

    # Structural criteria
    fast = nondecreasing_fastpath(tower, slack)
    if fast is None:
        gap = max(abs(alpha0 - raw.lo), abs(beta0 - raw.hi))
        evidence.append(Evidence('nondecreasing', statistic=gap, threshold=slack, fired=False))
    else:
        evidence.extend(fast)
    shrunk = top.level > 0 and top.width < delta_point
    evidence.append(Evidence(f'tower_shrink_level_{top.level}', statistic=top.width, threshold=delta_point, fired=shrunk))

    # Ratio criteria, always recorded
    epsilon = config.epsilon if config.epsilon is not None else 0.05 * width0
    all_bounded, all_growing = _crossing_criteria(level0, alpha0, beta0, epsilon, config, evidence, notes)
    profile = _level0_times(level0, alpha0, beta0, epsilon, notes)
    b1 = None
    if profile is not None:
        b1 = b1_sufficient(profile, config.ratio_bound_D, config.min_time)
        if b1 is None:
            stats = profile.stats(config.min_time)
            evidence.append(Evidence(
                'b1_bounded_times', statistic=stats.max_tail, threshold=config.ratio_bound_D,
                fired=False, epsilon=epsilon, note=f'{stats.count} tail ratios',
            ))
        else:
            evidence.append(b1)
            limit = contraction_bound(max(b1.statistic, 1.0 + 1e-12), raw.width)
            evidence.append(Evidence(
                'contraction_bound',
                statistic=width0,
                threshold=limit,
                fired=width0 <= limit + 0.02,
                note='level-0 width against (D-1)/(D+1) of the raw width',
            ))

    b1_side = [name for name, hit in (
        (f'tower_shrink_level_{top.level}', shrunk),
        ('crossings_bounded', all_bounded),
        ('b1_bounded_times', b1 is not None),
    ) if hit]
    b2_side = [name for name, hit in (
        ('nondecreasing', fast is not None),
        ('crossings_growing', all_growing),
    ) if hit]
    label = _resolve(b1_side, b2_side, notes)

    if label in (Label.B1, Label.B2):
        violations = tower.nesting_violations(config.delta_nest)
        if violations:
            notes.append(f'tower nesting violated at levels {violations}; {label.value} withdrawn')
            label = Label.INCONCLUSIVE

    if label == Label.B2 and profile is not None:
        evidence.extend(b2_extremal_check(profile, higher, config.ratio_bound_D, config.min_time, notes))

    return _finish(Verdict(label, tower, evidence, notes, n, name))


def _resolve(b1_side: List[str], b2_side: List[str], notes: List[str]) -> Label:
    """B1 and B2 criteria are mutually exclusive; a conflict is Inconclusive"""
    if b1_side and b2_side:
        notes.append(f'B1 criteria {b1_side} and B2 criteria {b2_side} both fired')
        return Label.INCONCLUSIVE
    if b1_side:
        return Label.B1
    if b2_side:
        return Label.B2
    notes.append('no B1 or B2 criterion fired')
    return Label.INCONCLUSIVE


def _finish(verdict: Verdict) -> Verdict:
    logger.info(f"Classified '{verdict.name}' at n={verdict.n}: {verdict.label.value}")
    return verdict


def _crossing_criteria(
    level0: LevelHistory,
    alpha0: float,
    beta0: float,
    epsilon: float,
    config: ClassifierConfig,
    evidence: List[Evidence],
    notes: List[str],
) -> Tuple[bool, bool]:
    """Bounded / growing crossing ratios over the gamma grid"""
    if epsilon <= 0 or beta0 - epsilon <= alpha0 + epsilon:
        notes.append(f'crossing grid skipped: epsilon {epsilon} leaves no gamma range')
        return False, False

    all_bounded = True
    all_growing = True
    for gamma in np.linspace(alpha0 + epsilon, beta0 - epsilon, config.gamma_grid).tolist():
        bounded = False
        growing = False
        for multiplier in config.epsilon_multipliers:
            eps = epsilon * multiplier
            crossings = detect_crossings(level0, gamma, eps)
            stats = crossings.stats(config.min_time)
            if stats.count < 1:
                continue
            if multiplier == config.epsilon_multipliers[0]:
                bounded = stats.max_tail <= config.ratio_bound_D
                evidence.append(Evidence(
                    'crossings_bounded', statistic=stats.max_tail, threshold=config.ratio_bound_D,
                    fired=bounded, gamma=gamma, epsilon=eps,
                ))
            # Every ratio past min_time, not only the final half
            growth = growth_statistic(crossings.tail_ratios(config.min_time))
            grew = growth > config.growth_factor
            evidence.append(Evidence(
                'crossings_growing', statistic=growth, threshold=config.growth_factor,
                fired=grew, gamma=gamma, epsilon=eps,
            ))
            growing = growing or grew
        all_bounded = all_bounded and bounded
        all_growing = all_growing and growing
    return all_bounded, all_growing


def _level0_times(
    level0: LevelHistory,
    alpha0: float,
    beta0: float,
    epsilon: float,
    notes: List[str],
) -> Optional[OscillationProfile]:
    try:
        return detect_times(level0, alpha0, beta0, epsilon)
    except BirkhoffError as e:
        notes.append(f'oscillation times unavailable: {str(e)}')
        return None


def b2_extremal_check(
    profile: OscillationProfile,
    higher: List[LevelHistory],
    D: float,
    min_time: float = 100.0,
    notes: Optional[List[str]] = None,
) -> List[Evidence]:
    """
    Level-k extremal-time ratios on a B2 orbit should exceed D for k <= 2.

    Each level's extremal times are found from the previous level's times.
    The result is recorded as evidence and never changes a label.
    """
    notes = notes if notes is not None else []
    evidence: List[Evidence] = []
    previous = profile
    for history in higher:
        current = extremal_times(history, previous)
        if len(current.times) < 2:
            notes.append(f'level {history.level} has too few extremal times for the B2 consistency check')
            break
        stats = current.stats(min_time)
        evidence.append(Evidence(
            f'b2_extremal_times_level_{history.level}',
            statistic=stats.max_tail,
            threshold=D,
            fired=stats.max_tail > D,
            note='consistency check',
        ))
        previous = current
    return evidence
