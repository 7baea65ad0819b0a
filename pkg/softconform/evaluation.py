"""Experiments around the checker: correlation of final scores with an
external metric, seeded noise injection, synthetic models and streams, and
the throughput stress harness."""

import bisect
import csv
import logging
import math
import time
from typing import (
    IO,
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
)

import numpy as np
from scipy.stats import t

from softconform.checker import CheckerConfig, OnlineChecker
from softconform.events import EventLog, StreamEvent, Trace
from softconform.models import AccomplishmentIndex, DescriptiveModel, Model
from softconform.readers import LogFormatError
from softconform.utils import ValidationError, format_decimal

logger = logging.getLogger(__name__)

NOISE_KINDS = ("swap-adjacent", "substitute-label", "insert-label")


class CorrelationUndefinedError(ValidationError):
    """Pearson's r needs three pairs and variance in both coordinates."""


class ScorePair(NamedTuple):
    case_id: str
    soft_conformance: float
    external_metric: float


class Correlation(NamedTuple):
    r: float
    p_value: float
    n: int

    def summary(self) -> str:
        return f"r={format_decimal(self.r)} p={format_decimal(self.p_value)} n={self.n}"


def correlate(x: Sequence[float], y: Sequence[float]) -> Correlation:
    """Sample Pearson's r with its two-sided p-value from Student's t."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("Both samples must be flat and of the same length")
    n = len(x)
    if n < 3:
        raise CorrelationUndefinedError(f"Correlation needs at least 3 pairs, got {n}")

    # a constant sample may not centre to exact zeros
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise CorrelationUndefinedError("Correlation is undefined for a constant sample")

    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)

    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return Correlation(r, 0.0, n)
    statistic = r * math.sqrt((n - 2) / (1.0 - r * r))
    p_value = float(2 * t.sf(abs(statistic), n - 2))
    return Correlation(r, p_value, n)


def pearson(pairs: Iterable[ScorePair], field: str = "external_metric") -> Correlation:
    """Correlate Soft Conformance with ``field`` over ``pairs``."""
    pairs = list(pairs)
    return correlate(
        [pair.soft_conformance for pair in pairs],
        [getattr(pair, field) for pair in pairs],
    )


class NoiseSpec(NamedTuple):
    kind: str
    intensity: float
    seed: int = 0

    def check(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(
                f"Unknown noise {self.kind!r}, expected one of {', '.join(NOISE_KINDS)}"
            )
        if not 0.0 <= self.intensity <= 1.0:
            raise ValidationError(f"Noise intensity {self.intensity!r} is outside [0, 1]")


def inject_noise(log: EventLog, attribute: str, spec: NoiseSpec) -> EventLog:
    """Return a noisy copy of ``log``.

    ``round(intensity * events)`` distinct events are picked with a generator
    seeded by ``spec.seed``. Depending on the kind, each picked event is
    swapped with its successor, gets a label drawn uniformly from the log's
    alphabet, or is followed by a copy of itself carrying such a label.
    Every case is noised on its own, so a repeated trace may come out as
    several distinct ones. Case ids are kept.
    """
    spec.check()
    cases = list(log.cases())
    alphabet = log.alphabet(attribute)
    total = sum(len(trace) for _, trace in cases)
    picks = round(spec.intensity * total)

    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(total, size=picks, replace=False) if picks else []
    by_case: Dict[int, List[int]] = {}
    offsets = np.cumsum([0] + [len(trace) for _, trace in cases])
    for position in sorted(int(p) for p in chosen):
        case = int(np.searchsorted(offsets, position, side="right")) - 1
        by_case.setdefault(case, []).append(position - int(offsets[case]))

    noisy = []
    for number, (case_id, trace) in enumerate(cases):
        events = list(trace)
        positions = by_case.get(number, [])
        if spec.kind == "swap-adjacent":
            for i in positions:
                if i + 1 < len(events):
                    events[i], events[i + 1] = events[i + 1], events[i]
        elif alphabet:
            labels = [alphabet[j] for j in rng.integers(len(alphabet), size=len(positions))]
            if spec.kind == "substitute-label":
                for i, label in zip(positions, labels):
                    events[i] = events[i].replace(**{attribute: label})
            else:
                # from the back so earlier positions stay valid
                for i, label in reversed(list(zip(positions, labels))):
                    events.insert(i + 1, events[i].replace(**{attribute: label}))
        noisy.append((case_id, Trace(events)))
    return EventLog(noisy)


def _walk_tables(model: Model):
    probs = model.probs
    cumulative = [np.cumsum(row).tolist() for row in probs]
    starts = [i for i, row in enumerate(probs) if row.sum() > 0]
    return cumulative, starts or list(range(len(probs)))


def _walk(cumulative, start, uniforms, max_length):
    path = [start]
    current = start
    for u in uniforms:
        if len(path) >= max_length:
            break
        row = cumulative[current]
        current = bisect.bisect_right(row, u)
        if current >= len(row):
            break  # row deficit: the case ends here
        path.append(current)
    return path


def random_walk_log(
    model: Model,
    traces: int,
    seed: int = 0,
    max_length: int = 50,
    attribute: str = "name",
) -> EventLog:
    """Sample ``traces`` cases by walking the model's matrix.

    A walk starts uniformly among labels with a non-zero row and stops with
    the probability missing from its current row, or at ``max_length``.
    """
    rng = np.random.default_rng(seed)
    cumulative, starts = _walk_tables(model)
    labels = model.index.labels
    cases = []
    for number in range(1, traces + 1):
        start = starts[int(rng.integers(len(starts)))]
        path = _walk(cumulative, start, rng.random(max_length - 1), max_length)
        cases.append((f"w{number}", Trace.of(attribute, (labels[i] for i in path))))
    return EventLog(cases)


def random_model(labels: int = 20, seed: int = 0, branching: int = 3) -> DescriptiveModel:
    """A sparse chain-like model over ``labels`` activities named a01, a02, ...

    Each label but the last moves to ``branching`` successors, one of them
    the next label, and ends the case with probability 0.1; the last label always
    ends it.
    """
    if labels < 2:
        raise ValidationError("A random model needs at least 2 labels")
    rng = np.random.default_rng(seed)
    width = len(str(labels))
    index = AccomplishmentIndex(tuple(f"a{i:0{width}d}" for i in range(1, labels + 1)))
    probs = np.zeros((labels, labels))
    for i in range(labels - 1):
        successors = {i + 1}
        while len(successors) < min(branching, labels):
            successors.add(int(rng.integers(labels)))
        weights = rng.dirichlet(np.ones(len(successors))) * 0.9
        probs[i, sorted(successors)] = weights
    return DescriptiveModel(index, probs)


def random_walk_stream(
    model: Model, seed: int = 0, concurrent: int = 500, max_length: int = 50
) -> Iterator[StreamEvent]:
    """Unbounded stream of ``concurrent`` random walks running side by side.

    Each event comes from a walker picked at random; a finished walker is
    replaced by a new case, so case ids ``s1, s2, ...`` never repeat.
    """
    rng = np.random.default_rng(seed)
    cumulative, starts = _walk_tables(model)
    labels = model.index.labels
    next_case = 0
    walkers: List[list] = []
    for _ in range(concurrent):
        next_case += 1
        walkers.append([f"s{next_case}", None, 0])

    index = 0
    while True:
        picks = rng.integers(concurrent, size=4096).tolist()
        uniforms = rng.random(4096).tolist()
        starters = rng.integers(len(starts), size=4096).tolist()
        for pick, u, starter in zip(picks, uniforms, starters):
            walker = walkers[pick]
            if walker[1] is None:
                walker[1] = starts[starter]
            else:
                row = cumulative[walker[1]]
                following = bisect.bisect_right(row, u)
                if following >= len(row) or walker[2] >= max_length:
                    next_case += 1
                    walker[:] = [f"s{next_case}", starts[starter], 0]
                else:
                    walker[1] = following
            walker[2] += 1
            index += 1
            yield StreamEvent(walker[0], labels[walker[1]], index)


def repeat_stream(events: Sequence[StreamEvent]) -> Iterator[StreamEvent]:
    """Replay ``events`` forever, suffixing case ids with the round number."""
    if not events:
        return
    index = 0
    round_number = 0
    while True:
        round_number += 1
        for event in events:
            index += 1
            yield StreamEvent(f"{event.case_id}/{round_number}", event.accomplishment, index)


class ThroughputReport(NamedTuple):
    events_processed: int
    events_per_second: List[int]
    peak_case_map_size: int
    seconds: float
    capacity: int
    interrupted: bool = False

    @property
    def mean_rate(self) -> float:
        return self.events_processed / self.seconds if self.seconds > 0 else 0.0

    def summary(self) -> str:
        return (
            f"events={self.events_processed} seconds={self.seconds:.3f} "
            f"rate={self.mean_rate:.1f} peak_cases={self.peak_case_map_size} "
            f"capacity={self.capacity}"
        )


def stress(
    model,
    source: Iterable[StreamEvent],
    duration: float,
    capacity: int,
    unknown_policy: str = "zero",
    clock: Callable[[], float] = time.monotonic,
    check_every: int = 256,
) -> ThroughputReport:
    """Push ``source`` through a checker for ``duration`` seconds.

    Events are counted in one-second buckets. The clock is read every
    ``check_every`` events; an interrupt ends the run early and the
    partial report is returned.
    """
    checker = OnlineChecker(CheckerConfig(model, capacity, unknown_policy))
    process = checker.process_event
    buckets: List[int] = []
    processed = 0
    since_check = 0
    interrupted = False
    start = clock()
    elapsed = 0.0
    try:
        for event in source:
            process(event)
            processed += 1
            since_check += 1
            if since_check == check_every:
                elapsed = clock() - start
                _add_to_bucket(buckets, elapsed, since_check, duration)
                since_check = 0
                if elapsed >= duration:
                    break
    except KeyboardInterrupt:
        interrupted = True
        logger.warning("Interrupted, reporting the partial run")
    elapsed = clock() - start
    if since_check:
        _add_to_bucket(buckets, elapsed, since_check, duration)

    report = ThroughputReport(
        processed, buckets, checker.peak_size, elapsed, capacity, interrupted
    )
    logger.info("Stress run: %s", report.summary())
    return report


def _add_to_bucket(buckets, elapsed, count, duration):
    bucket = int(elapsed)
    if elapsed >= duration:
        # overshoot belongs to the last second of the run
        bucket = max(0, math.ceil(duration) - 1)
    if bucket >= len(buckets):
        buckets.extend([0] * (bucket + 1 - len(buckets)))
    buckets[bucket] += count


def write_throughput_csv(report: ThroughputReport, handle: IO) -> None:
    writer = csv.writer(handle)
    writer.writerow(("bucket_start_s", "events"))
    writer.writerows(enumerate(report.events_per_second))


def _read_keyed_csv(path, value_column, convert):
    values = {}
    try:
        with open(path, encoding="utf-8-sig", newline="") as handle:
            reader = csv.DictReader(handle)
            fields = reader.fieldnames or []
            for column in ("case_id", value_column):
                if column not in fields:
                    raise LogFormatError(path, 1, f"missing column {column!r}")
            for row in reader:
                case_id = row["case_id"]
                if case_id in values:
                    raise LogFormatError(
                        path, reader.line_num, f"duplicate case id {case_id!r}"
                    )
                try:
                    values[case_id] = convert(row[value_column])
                except (TypeError, ValueError):
                    raise LogFormatError(
                        path,
                        reader.line_num,
                        f"{row[value_column]!r} is not a number",
                    ) from None
    except OSError as e:
        raise LogFormatError(path, None, e.strerror) from None
    return values


def read_fitness_csv(path: str, metric_column: str = "metric") -> Dict[str, float]:
    """Read the ``case_id,<metric>`` CSV produced by an external tool."""
    return _read_keyed_csv(path, metric_column, float)


def _score(text):
    return None if text == "pending" else float(text)


def read_scores_csv(path: str) -> Dict[str, Optional[float]]:
    """Read a scores CSV as written by ``softconform check``."""
    return _read_keyed_csv(path, "soft_conformance", _score)


class JoinResult(NamedTuple):
    pairs: List[ScorePair]
    unmatched: int
    pending: int


def join_scores(
    scores: Dict[str, Optional[float]], metrics: Dict[str, float]
) -> JoinResult:
    """Pair scores and metrics on exact case ids.

    Ids present on one side only are counted as unmatched; pending scores
    are left out too.
    """
    pairs = []
    pending = 0
    for case_id, score in scores.items():
        if case_id not in metrics:
            continue
        if score is None:
            pending += 1
            continue
        pairs.append(ScorePair(case_id, score, metrics[case_id]))
    unmatched = len(scores.keys() ^ metrics.keys())
    if unmatched:
        logger.warning("%s case ids appear on one side only and are excluded", unmatched)
    if pending:
        logger.warning("%s pending scores are excluded", pending)
    return JoinResult(pairs, unmatched, pending)
