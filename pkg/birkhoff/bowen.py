"""Heteroclinic-cycle flows reduced to their return maps.

An orbit near a cycle between two saddles p1, p2 alternates residences near
p1 and p2, separated by bounded transits. Residence times follow closed-form
recursions:

    hyperbolic      T_j = C rho^j, C = ln(1/x0) / mu, rho = lambda / mu
    non-hyperbolic  T_j = (x_j^-2 - d^-2) / 2, x_{j+1} = alpha d exp(-T_j)

so the observable along the flow is a piecewise-constant SegmentSeries. No ODE
is integrated anywhere.
"""
import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from birkhoff.errors import InvalidInputError, SamplingError
from birkhoff.means import KahanSum
from birkhoff.sequences import ObservableStream, iter_block_chunks

logger = logging.getLogger(__name__)

HYPERBOLIC = 'hyperbolic'
NONHYPERBOLIC = 'nonhyperbolic'
VARIANTS = (HYPERBOLIC, NONHYPERBOLIC)

DEFAULT_J = {HYPERBOLIC: 40, NONHYPERBOLIC: 6}

RESIDENCE_1 = 'residence-1'
RESIDENCE_2 = 'residence-2'
TRANSIT = 'transit'

# Residence times above this are advanced in log space
LOG_SWITCH = 30.0
# Largest log T still usable as a double in the next step
LOG_LIMIT = 700.0

MAX_SAMPLES = 2 ** 26


@dataclass
class CycleParams:
    """Parameters of both cycle variants; x0 defaults to e^-1 (hyperbolic) or 1/2 (non-hyperbolic)"""

    lam: float = 2.0
    mu: float = 1.0
    x0: Optional[float] = None
    d_nbhd: float = 1.0
    alpha_glob: float = 1.0
    tau_transit: float = 1.0
    phi1: float = 0.0
    phi2: float = 1.0
    phi_transit: Optional[float] = None

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def transit_value(self) -> float:
        if self.phi_transit is None:
            return 0.5 * (self.phi1 + self.phi2)
        return self.phi_transit

    def entry(self, variant: str) -> float:
        if self.x0 is not None:
            return self.x0
        return math.exp(-1.0) if variant == HYPERBOLIC else 0.5

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'CycleParams':
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"Unknown cycle parameters: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Segment:
    """One piece of the flow; log-only segments carry duration = inf"""

    j: int
    tag: str
    value: float
    duration: float
    log_duration: float
    is_log: bool = False


@dataclass
class SegmentSeries:
    segments: List[Segment] = field(default_factory=list)
    variant: str = HYPERBOLIC
    truncated: bool = False
    log_x: List[float] = field(default_factory=list)
    log_y: List[float] = field(default_factory=list)
    name: str = 'bowen'

    def residences(self) -> List[Segment]:
        return [s for s in self.segments if s.tag != TRANSIT]

    @property
    def has_log_segments(self) -> bool:
        return any(s.is_log for s in self.segments)


@dataclass(frozen=True)
class FlowEvent:
    """Exact time average of the flow observable at a segment end"""

    j: int
    tag: str
    time: float
    log_time: float
    average: float


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _residence(params: CycleParams, j: int, duration: float, log_duration: float, is_log: bool) -> Segment:
    tag = RESIDENCE_1 if j % 2 == 1 else RESIDENCE_2
    value = params.phi1 if tag == RESIDENCE_1 else params.phi2
    if is_log:
        duration = math.inf
    return Segment(j=j, tag=tag, value=value, duration=duration, log_duration=log_duration, is_log=is_log)


def _append_with_transit(series: SegmentSeries, params: CycleParams, segment: Segment) -> None:
    series.segments.append(segment)
    if params.tau_transit > 0:
        series.segments.append(Segment(
            j=segment.j, tag=TRANSIT, value=params.transit_value,
            duration=params.tau_transit, log_duration=math.log(params.tau_transit),
        ))


def _validate_common(params: CycleParams, J: int) -> None:
    if J < 1:
        raise InvalidInputError(f"J must be >= 1, got {J}")
    if params.tau_transit < 0:
        raise InvalidInputError(f"tau_transit must be >= 0, got {params.tau_transit}")


def hyperbolic_times(params: CycleParams, J: int) -> SegmentSeries:
    """
    Residences T_j = C rho^j, j = 1..J, each followed by a transit.

    Entry and exit coordinates are tracked as logs: log x_j = rho^j log x0,
    log y_j = rho log x_j and x_{j+1} = y_j.
    """
    _validate_common(params, J)
    if params.lam <= 0 or params.mu <= 0:
        raise InvalidInputError("lambda and mu must be positive")
    rho = params.rho
    if rho <= 1.0:
        raise InvalidInputError(f"rho = lambda/mu must exceed 1, got {rho}")
    x0 = params.entry(HYPERBOLIC)
    if not 0.0 < x0 < 1.0:
        raise InvalidInputError(f"x0 must lie in (0, 1), got {x0}")

    c = math.log(1.0 / x0) / params.mu
    log_c = math.log(c)
    series = SegmentSeries(variant=HYPERBOLIC, name='bowen-hyperbolic')
    log_x = math.log(x0) * rho
    for j in range(1, J + 1):
        log_t = log_c + j * math.log(rho)
        series.log_x.append(log_x)
        series.log_y.append(rho * log_x)
        log_x = rho * log_x
        is_log = log_t > LOG_LIMIT
        duration = math.inf if is_log else c * rho ** j
        _append_with_transit(series, params, _residence(params, j, duration, log_t, is_log))

    logger.info(f"Hyperbolic cycle: {J} residences, rho={rho:g}, C={c:g}")
    return series


def nonhyperbolic_times(params: CycleParams, J: int) -> SegmentSeries:
    """
    Residences of the cubic-saddle cycle.

    T_1 = (x0^-2 - d^-2)/2, then x_{j+1} = alpha d exp(-T_j), T_{j+1} = (x_{j+1}^-2 - d^-2)/2.
    Once T_j > 30 the next time is kept as
    log T_{j+1} = 2 T_j - log(2 alpha^2 d^2) + log1p(-alpha^2 exp(-2 T_j)).
    A residence with log T > 700 ends the series with truncated = True.
    """
    _validate_common(params, J)
    d = params.d_nbhd
    alpha = params.alpha_glob
    if not 0.0 < d <= 1.0:
        raise InvalidInputError(f"d_nbhd must lie in (0, 1], got {d}")
    if alpha <= 0:
        raise InvalidInputError(f"alpha_glob must be positive, got {alpha}")
    x0 = params.entry(NONHYPERBOLIC)
    if not 0.0 < x0 < d:
        raise InvalidInputError(f"x0 must lie in (0, d), got {x0}")

    series = SegmentSeries(variant=NONHYPERBOLIC, name='bowen-nonhyperbolic')
    t = 0.5 * (x0 ** -2 - d ** -2)
    log_t = math.log(t)
    is_log = False
    for j in range(1, J + 1):
        _append_with_transit(series, params, _residence(params, j, t, log_t, is_log))
        if j == J:
            break
        if log_t > LOG_LIMIT:
            series.truncated = True
            logger.warning(f"Non-hyperbolic series truncated after {j} residences (log T = {log_t:.4g})")
            break
        if alpha * math.exp(-t) >= 1.0:
            raise InvalidInputError(f"Orbit does not re-enter: alpha*exp(-T_{j}) = {alpha * math.exp(-t):g} >= 1")
        if t <= LOG_SWITCH:
            x = alpha * d * math.exp(-t)
            t = 0.5 * (x ** -2 - d ** -2)
            log_t = math.log(t)
        else:
            log_t = 2.0 * t - math.log(2.0 * alpha * alpha * d * d) + math.log1p(-alpha * alpha * math.exp(-2.0 * t))
            is_log = True
            t = _safe_exp(log_t)

    logger.info(f"Non-hyperbolic cycle: {len(series.residences())} residences, truncated={series.truncated}")
    return series


def flow_average_at_events(series: SegmentSeries) -> List[FlowEvent]:
    """
    Running time average (1/t) * integral of the observable at every segment end.

    Durations stay in compensated linear sums until a log-only segment appears;
    from then on the average is updated with max-shifted weights.
    """
    if not series.segments:
        raise InvalidInputError("Segment series is empty")
    events: List[FlowEvent] = []
    total = KahanSum()
    weighted = KahanSum()
    log_total: Optional[float] = None
    average = 0.0
    for segment in series.segments:
        if log_total is None and not segment.is_log:
            duration = segment.duration
            total.add(duration)
            weighted.add(duration * segment.value)
            average = weighted.value / total.value
            time = total.value
            log_time = math.log(time)
        else:
            if log_total is None:
                log_total = math.log(total.value) if total.value > 0 else -math.inf
            new_total = float(np.logaddexp(log_total, segment.log_duration))
            average = average * math.exp(log_total - new_total) + segment.value * math.exp(segment.log_duration - new_total)
            log_total = new_total
            log_time = new_total
            time = _safe_exp(new_total)
        events.append(FlowEvent(j=segment.j, tag=segment.tag, time=time, log_time=log_time, average=average))
    return events


@dataclass
class SampleCounts:
    dt: float
    counts: np.ndarray
    boundaries: np.ndarray

    @property
    def total(self) -> int:
        return int(self.boundaries[-1])


def sample_counts(series: SegmentSeries, samples_per_segment: int, max_samples: int = MAX_SAMPLES) -> SampleCounts:
    """
    Uniform discretization: dt = shortest duration / samples_per_segment, boundary
    sample indices round(t / dt).

    Raises:
        SamplingError: log-only segments, or more than max_samples samples
    """
    if samples_per_segment < 1:
        raise InvalidInputError(f"samples_per_segment must be >= 1, got {samples_per_segment}")
    if not series.segments:
        raise InvalidInputError("Segment series is empty")
    if series.has_log_segments:
        raise SamplingError("Series has log-space durations that cannot be sampled")
    durations = np.array([s.duration for s in series.segments], dtype=np.float64)
    dt = float(np.min(durations)) / samples_per_segment
    total_steps = float(np.sum(durations)) / dt
    if total_steps > max_samples:
        raise SamplingError(f"Sampling needs {total_steps:.3g} samples, above the limit {max_samples}")
    boundaries = np.floor(np.cumsum(durations) / dt + 0.5).astype(np.int64)
    counts = np.diff(np.concatenate(([0], boundaries)))
    return SampleCounts(dt=dt, counts=counts, boundaries=boundaries)


def sample_flow(
    series: SegmentSeries,
    samples_per_segment: int,
    max_samples: int = MAX_SAMPLES,
) -> ObservableStream:
    """Discrete stream repeating each segment value in proportion to its duration"""
    plan = sample_counts(series, samples_per_segment, max_samples)
    values = [s.value for s in series.segments]
    counts = plan.counts.tolist()

    def source(n: int, chunk_size: int) -> Iterator[np.ndarray]:
        return iter_block_chunks(zip(counts, values), n, chunk_size=chunk_size, dtype=np.float64)

    logger.info(f"Sampled '{series.name}' into {plan.total} terms (dt={plan.dt:g})")
    return ObservableStream(
        source,
        length=plan.total,
        bound=max(abs(v) for v in values),
        name=f'{series.name}-sampled',
    )


def series_to_csv(series: SegmentSeries) -> str:
    """CSV with header j,tag,duration_or_logduration,is_log,value"""
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(['j', 'tag', 'duration_or_logduration', 'is_log', 'value'])
    for s in series.segments:
        amount = s.log_duration if s.is_log else s.duration
        writer.writerow([s.j, s.tag, repr(float(amount)), str(s.is_log).lower(), repr(float(s.value))])
    return output.getvalue()


def events_to_csv(events: List[FlowEvent]) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(['j', 'tag', 'time', 'log_time', 'average'])
    for e in events:
        writer.writerow([e.j, e.tag, repr(float(e.time)), repr(float(e.log_time)), repr(float(e.average))])
    return output.getvalue()
