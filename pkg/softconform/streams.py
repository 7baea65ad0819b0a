"""Event streams: the line protocol, log replay and the TCP emitter.

Wire protocol, one event per ``\\n``-terminated UTF-8 line::

    case_id,accomplishment[,timestamp]

The case id ends at the first comma and the accomplishment at the second;
anything after is an opaque timestamp. Fields are trimmed. Commas and
newlines cannot appear in case ids or labels.
"""

import itertools
import logging
import socket
import time
from typing import Callable, Iterable, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from softconform.events import EventLog, StreamEvent, project
from softconform.utils import SoftConformError, ValidationError

logger = logging.getLogger(__name__)

SCHEDULES = ("sequential", "round-robin", "shuffle")


class MalformedLineError(SoftConformError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"Malformed line {line!r}: {reason}")


class StreamConnectionError(SoftConformError):
    pass


class WireEvent(NamedTuple):
    case_id: str
    accomplishment: str
    timestamp: Optional[str] = None

    def to_stream_event(self, arrival_index: int) -> StreamEvent:
        return StreamEvent(self.case_id, self.accomplishment, arrival_index)


def parse_wire_line(line: str) -> Optional[WireEvent]:
    """Parse one wire line; blank lines give None."""
    line = line.rstrip("\r\n")
    if not line.strip():
        return None
    case_id, sep, rest = line.partition(",")
    if not sep:
        raise MalformedLineError(line, "expected case_id,accomplishment")
    accomplishment, _, timestamp = rest.partition(",")
    case_id = case_id.strip()
    accomplishment = accomplishment.strip()
    if not case_id:
        raise MalformedLineError(line, "empty case id")
    if not accomplishment:
        raise MalformedLineError(line, "empty accomplishment")
    return WireEvent(case_id, accomplishment, timestamp.strip() or None)


def format_wire_line(event: StreamEvent) -> str:
    for value in (event.case_id, event.accomplishment):
        if "," in value or "\n" in value or "\r" in value or value != value.strip():
            raise ValidationError(f"{value!r} cannot be sent on the wire")
    return f"{event.case_id},{event.accomplishment}\n"


def read_wire_stream(
    lines: Iterable[str], on_malformed: Optional[Callable[[str, str], None]] = None
) -> Iterator[StreamEvent]:
    """Turn a file or stdin into a stream, numbering events from 1.

    Malformed lines are reported to ``on_malformed`` (or logged) and skipped.
    """
    index = 0
    for line in lines:
        try:
            wire = parse_wire_line(line)
        except MalformedLineError as e:
            if on_malformed is not None:
                on_malformed(e.line, e.reason)
            else:
                logger.warning(
                    "Skipping malformed line %r: %s",
                    e.line,
                    e.reason,
                    extra={"limit_msg": "Skipping more malformed lines"},
                )
            continue
        if wire is None:
            continue
        index += 1
        yield wire.to_stream_event(index)


class ReplaySchedule(NamedTuple):
    """How traces are intertwined into a stream; ``rate`` is in events per
    second and None means as fast as possible."""

    mode: str = "sequential"
    seed: int = 0
    rate: Optional[float] = None

    @classmethod
    def from_settings(cls, settings):
        return cls(settings["SCHEDULE"], settings["SEED"], settings["RATE"])


def replay_log(
    log: EventLog, attribute: str, schedule: ReplaySchedule = ReplaySchedule(),
    policy: str = "fail",
) -> List[StreamEvent]:
    """Intertwine the projected traces of ``log`` into one stream.

    ``sequential`` emits trace after trace, ``round-robin`` one event of each
    running case in turn, and ``shuffle`` a seeded random interleaving. The
    order of events within a case is preserved by all three.
    """
    if schedule.mode not in SCHEDULES:
        raise ValidationError(
            f"Unknown schedule {schedule.mode!r}, expected one of {', '.join(SCHEDULES)}"
        )
    cases = [
        (case_id, project(trace, attribute, policy, case_id))
        for case_id, trace in log.cases()
    ]
    cases = [(case_id, labels) for case_id, labels in cases if labels]

    if schedule.mode == "sequential":
        order = [(case_id, label) for case_id, labels in cases for label in labels]
    elif schedule.mode == "round-robin":
        columns = itertools.zip_longest(
            *([(case_id, label) for label in labels] for case_id, labels in cases)
        )
        order = [item for column in columns for item in column if item is not None]
    else:
        order = _shuffled(cases, schedule.seed)

    return [
        StreamEvent(case_id, label, index)
        for index, (case_id, label) in enumerate(order, 1)
    ]


def _shuffled(cases, seed) -> List[Tuple[str, str]]:
    # one token per event, naming its case; the k-th token of a case takes
    # the k-th label of that case
    tokens = np.repeat(np.arange(len(cases)), [len(labels) for _, labels in cases])
    tokens = np.random.default_rng(seed).permutation(tokens)
    cursors = [0] * len(cases)
    order = []
    for token in tokens.tolist():
        case_id, labels = cases[token]
        order.append((case_id, labels[cursors[token]]))
        cursors[token] += 1
    return order


def throttle(
    stream: Iterable[StreamEvent],
    rate: Optional[float],
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> Iterator[StreamEvent]:
    """Pace ``stream`` to ``rate`` events per second."""
    if not rate:
        yield from stream
        return
    interval = 1.0 / rate
    start = clock()
    for count, event in enumerate(stream):
        delay = start + count * interval - clock()
        if delay > 0:
            sleep(delay)
        yield event


class EmitReport(NamedTuple):
    lines: int
    seconds: float

    @property
    def rate(self) -> float:
        """Achieved events per second."""
        return self.lines / self.seconds if self.seconds > 0 else float("inf")


def _connect(address, retries, delay, timeout):
    for attempt in range(retries + 1):
        try:
            return socket.create_connection(address, timeout=timeout)
        except OSError as e:
            if attempt == retries:
                raise StreamConnectionError(
                    f"Cannot connect to {address[0]}:{address[1]} "
                    f"after {retries + 1} attempts: {e}"
                ) from None
            logger.warning(
                "Connection to %s:%s failed (%s), retrying", address[0], address[1], e
            )
            time.sleep(min(delay * 2**attempt, 5.0))


def emit_tcp(
    stream: Iterable[StreamEvent],
    address: Tuple[str, int],
    rate: Optional[float] = None,
    retries: int = 5,
    batch_size: int = 1000,
    retry_delay: float = 0.1,
    timeout: float = 10.0,
) -> EmitReport:
    """Send ``stream`` as wire lines to a listener at ``address``.

    Unthrottled streams are sent in batches of ``batch_size`` lines. A lost
    connection is reopened up to ``retries`` times per batch and the batch
    sent again, which may deliver some of its lines twice.
    """
    if rate:
        batch_size = 1
    start = time.monotonic()
    sock = _connect(address, retries, retry_delay, timeout)
    sent = 0
    try:
        events = iter(throttle(stream, rate))
        while True:
            batch = list(itertools.islice(events, batch_size))
            if not batch:
                break
            payload = "".join(format_wire_line(e) for e in batch).encode("utf-8")
            for attempt in range(retries + 1):
                try:
                    sock.sendall(payload)
                    break
                except OSError as e:
                    sock.close()
                    if attempt == retries:
                        raise StreamConnectionError(
                            f"Connection to {address[0]}:{address[1]} lost: {e}"
                        ) from None
                    logger.warning("Connection lost (%s), reconnecting", e)
                    sock = _connect(address, retries, retry_delay, timeout)
            sent += len(batch)
        sock.shutdown(socket.SHUT_WR)
    finally:
        sock.close()

    report = EmitReport(sent, time.monotonic() - start)
    logger.info("Sent %s events at %.1f events/s", report.lines, report.rate)
    return report
