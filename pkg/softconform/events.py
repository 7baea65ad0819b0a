"""In-memory vocabulary shared by every module: events, traces, logs and the
projection of those onto a single attribute.

Messages number events from 1; code indexes them from 0.
"""

from __future__ import annotations

import logging
from collections import Counter
from typing import (
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Tuple,
    Union,
)

from softconform.utils import SoftConformError, ValidationError

logger = logging.getLogger(__name__)

MISSING_POLICIES = ("fail", "skip")

Projection = Tuple[str, ...]


class ProjectionError(SoftConformError):
    """An event lacks the attribute a projection asked for."""

    def __init__(self, attribute, index, case_id=None):
        self.attribute = attribute
        self.index = index
        self.case_id = case_id
        where = f"event {index + 1}"
        if case_id is not None:
            where += f" of case {case_id!r}"
        super().__init__(f"Attribute {attribute!r} is missing from {where}")


class Event(Mapping):
    """Immutable key-value event.

    Absent attributes are simply not in the map; values are non-empty text.
    """

    __slots__ = ("_attributes", "_hash")

    def __init__(self, attributes: Optional[Mapping[str, str]] = None, **kwargs):
        merged = dict(attributes or {}, **kwargs)
        for name, value in merged.items():
            if not isinstance(name, str) or not name:
                raise ValueError(f"Attribute names must be non-empty text: {name!r}")
            if not isinstance(value, str) or not value:
                raise ValueError(
                    f"Attribute {name!r} must have non-empty text, got {value!r}"
                )
        self._attributes = merged
        self._hash = hash(frozenset(merged.items()))

    def __getitem__(self, name):
        return self._attributes[name]

    def __iter__(self):
        return iter(self._attributes)

    def __len__(self):
        return len(self._attributes)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Event):
            return self._hash == other._hash and self._attributes == other._attributes
        return NotImplemented

    def __repr__(self):
        return f"Event({self._attributes!r})"

    def replace(self, **attributes) -> Event:
        """Return a copy of this event with some attributes overridden."""
        return Event(self._attributes, **attributes)


class Trace:
    """Non-empty, ordered and immutable sequence of events."""

    __slots__ = ("events", "_hash")

    def __init__(self, events: Iterable[Union[Event, Mapping[str, str]]]):
        self.events = tuple(
            e if isinstance(e, Event) else Event(e) for e in events
        )
        if not self.events:
            raise ValueError("A trace holds at least one event")
        self._hash = hash(self.events)

    @classmethod
    def of(cls, attribute: str, labels: Iterable[str]) -> Trace:
        """Build a trace whose events carry only ``attribute``."""
        return cls(Event({attribute: label}) for label in labels)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, index):
        return self.events[index]

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if isinstance(other, Trace):
            return self._hash == other._hash and self.events == other.events
        return NotImplemented

    def __repr__(self):
        return f"Trace({list(self.events)!r})"


class StreamEvent(NamedTuple):
    """One observation of an event stream: accomplishment ``accomplishment``
    performed by case ``case_id``, in position ``arrival_index`` (from 1)."""

    case_id: str
    accomplishment: str
    arrival_index: int


class EventLog:
    """Multiset of traces that remembers which case produced each occurrence.

    Two logs are equal when their trace multisets are equal; case ids and
    ingestion order are carried for reporting only.
    """

    def __init__(self, cases: Iterable[Tuple[str, Trace]] = ()):
        self._cases: List[Tuple[str, Trace]] = []
        seen = set()
        for case_id, trace in cases:
            if case_id in seen:
                raise ValueError(f"Duplicate case id {case_id!r}")
            seen.add(case_id)
            self._cases.append((case_id, trace))
        self._traces = Counter(trace for _, trace in self._cases)

    @classmethod
    def from_multiset(cls, traces: Mapping[Trace, int]) -> EventLog:
        """Build a log from ``trace -> multiplicity``, naming cases c1, c2, ..."""
        cases = []
        for trace, multiplicity in traces.items():
            if multiplicity < 1:
                raise ValueError("Trace multiplicities must be strictly positive")
            cases.extend([trace] * multiplicity)
        return cls((f"c{number}", trace) for number, trace in enumerate(cases, 1))

    @property
    def traces(self) -> Counter:
        """The multiset view, ``trace -> multiplicity``."""
        return Counter(self._traces)

    def cases(self) -> Iterator[Tuple[str, Trace]]:
        """``(case_id, trace)`` pairs in ingestion order."""
        return iter(self._cases)

    @property
    def event_count(self) -> int:
        return sum(len(trace) for _, trace in self._cases)

    def alphabet(self, attribute: str) -> List[str]:
        """Sorted distinct values of ``attribute`` over all events."""
        return sorted(
            {e[attribute] for _, t in self._cases for e in t if attribute in e}
        )

    def __len__(self):
        return len(self._cases)

    def __bool__(self):
        return bool(self._cases)

    def __eq__(self, other):
        if isinstance(other, EventLog):
            return self._traces == other._traces
        return NotImplemented

    def __repr__(self):
        return f"<EventLog {len(self._traces)} variants, {len(self)} cases>"


def _check_policy(policy):
    if policy not in MISSING_POLICIES:
        raise ValidationError(
            f"Unknown missing-attribute policy {policy!r}, "
            f"expected one of {', '.join(MISSING_POLICIES)}"
        )


def project(
    trace: Trace, attribute: str, policy: str = "fail", case_id: Optional[str] = None
) -> Projection:
    """Project ``trace`` onto ``attribute``.

    With the ``fail`` policy an event lacking the attribute raises
    ProjectionError; with ``skip`` it is dropped from the projection.
    """
    if not attribute:
        raise ValidationError("The projection attribute must be a non-empty name")
    _check_policy(policy)

    labels = []
    for index, event in enumerate(trace):
        try:
            labels.append(event[attribute])
        except KeyError:
            if policy == "fail":
                raise ProjectionError(attribute, index, case_id) from None
            logger.warning(
                "Skipping event %s of case %s without attribute %r",
                index + 1,
                case_id,
                attribute,
                extra={"limit_msg": "Skipping more events without the attribute"},
            )
    return tuple(labels)


def project_log(
    log: EventLog, attribute: str, policy: str = "fail"
) -> Dict[Projection, int]:
    """Project every trace of ``log``, merging equal projections.

    Multiplicities are conserved. Under ``skip`` a trace whose events all lack
    the attribute projects to the empty sequence.
    """
    projected: Counter = Counter()
    for case_id, trace in log.cases():
        projected[project(trace, attribute, policy, case_id)] += 1
    return projected
