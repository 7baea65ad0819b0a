import csv
import logging
from typing import IO, Iterable, List, Mapping, Optional, Tuple

from softconform.events import EventLog, Trace
from softconform.readers import CsvLogSchema
from softconform.utils import SoftConformError, ValidationError, format_decimal

logger = logging.getLogger(__name__)

SCORES_HEADER = ("case_id", "soft_conformance", "observations")
PENDING = "pending"


def _serialize(trace: Trace, columns: List[str]) -> Tuple[Tuple[str, ...], ...]:
    return tuple(tuple(event.get(name, "") for name in columns) for event in trace)


def write_csv_log(
    log: EventLog, path: str, schema: CsvLogSchema = CsvLogSchema()
) -> None:
    """Write ``log`` as CSV, one row per event.

    The output only depends on the trace multiset: traces are sorted on their
    serialized rows and named ``c1``, ``c2``, ... in that order, so a trace
    of multiplicity 3 gets three case ids. Columns are ``schema.case_column``
    followed by the sorted attribute names; absent attributes are empty cells.
    """
    names = sorted({name for _, trace in log.cases() for e in trace for name in e})
    if schema.case_column in names:
        raise ValidationError(
            f"Events carry an attribute named like the case column "
            f"{schema.case_column!r}"
        )

    rows = sorted(_serialize(trace, names) for _, trace in log.cases())
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, delimiter=schema.delimiter)
            if schema.has_header:
                writer.writerow([schema.case_column, *names])
            for number, trace_rows in enumerate(rows, 1):
                case_id = f"c{number}"
                writer.writerows([case_id, *row] for row in trace_rows)
    except OSError as e:
        raise SoftConformError(f"Cannot write log {path}: {e.strerror}") from None
    logger.debug("Wrote %s cases to %s", len(rows), path)


def format_score(score: Optional[float]) -> str:
    return PENDING if score is None else format_decimal(score)


def write_scores_csv(notifications: Iterable, handle: IO) -> int:
    """Write the final notification of each case as a scores CSV.

    Returns the number of rows written.
    """
    writer = csv.writer(handle)
    writer.writerow(SCORES_HEADER)
    count = 0
    for notification in notifications:
        writer.writerow(
            [
                notification.case_id,
                format_score(notification.score),
                notification.observations,
            ]
        )
        count += 1
    return count


class NotificationWriter:
    """Write notification lines to ``handle``, flushing every
    ``flush_every`` lines and once more on close."""

    def __init__(self, handle: IO, flush_every: int = 100):
        self.handle = handle
        self.flush_every = flush_every
        self.lines = 0

    def write_header(self, **fields: object) -> None:
        """Write a ``#`` comment line with ``key=value`` pairs."""
        text = " ".join(f"{key}={value}" for key, value in fields.items())
        self.handle.write(f"# {text}\n")

    def write(self, notification) -> None:
        self.handle.write(notification.to_line() + "\n")
        self.lines += 1
        if self.lines % self.flush_every == 0:
            self.handle.flush()

    def close(self) -> None:
        self.handle.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Writer:
    """Write logs and reports under the options held in ``settings``."""

    def __init__(self, settings: Mapping):
        self.settings = settings

    def write_log(self, log: EventLog, path: str) -> None:
        write_csv_log(log, path, CsvLogSchema.from_settings(self.settings))

    def notifications(self, handle: IO) -> NotificationWriter:
        return NotificationWriter(handle, self.settings["FLUSH_EVERY"])
