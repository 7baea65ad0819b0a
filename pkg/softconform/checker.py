"""Online Soft Conformance checking.

The checker keeps, per running case, the last accomplishment seen and the
running mean of the transition probabilities looked up in the prepared
model. Each event costs one dictionary access and one matrix lookup,
whatever its position in the stream, and at most ``capacity`` cases are
remembered at any time.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, NamedTuple, Optional

from softconform import signals
from softconform.events import EventLog, StreamEvent, project
from softconform.models import PreparedModel
from softconform.utils import ValidationError, format_decimal

logger = logging.getLogger(__name__)

UNKNOWN_POLICIES = ("zero", "uniform-floor")


class CaseState:
    """What the checker remembers about one running case."""

    __slots__ = ("last_accomplishment", "mean", "observations", "last_update")

    def __init__(self, last_accomplishment, mean=0.0, observations=0, last_update=0):
        self.last_accomplishment = last_accomplishment
        self.mean = mean
        self.observations = observations
        self.last_update = last_update

    def __repr__(self):
        return (
            f"CaseState({self.last_accomplishment!r}, mean={self.mean!r}, "
            f"observations={self.observations}, last_update={self.last_update})"
        )


@dataclass(frozen=True)
class CheckerConfig:
    model: PreparedModel
    capacity: int = 1000
    unknown_policy: str = "zero"

    def __post_init__(self):
        if not isinstance(self.model, PreparedModel):
            raise ValidationError(
                "The checker needs a prepared model, prepare it with an alpha first"
            )
        if (
            isinstance(self.capacity, bool)
            or not isinstance(self.capacity, int)
            or self.capacity < 1
        ):
            raise ValidationError(
                f"Capacity must be a positive integer, not {self.capacity!r}"
            )
        if self.unknown_policy not in UNKNOWN_POLICIES:
            raise ValidationError(
                f"Unknown label policy must be one of {', '.join(UNKNOWN_POLICIES)}"
            )

    @classmethod
    def from_settings(cls, model, settings):
        return cls(model, settings["CAPACITY"], settings["UNKNOWN_POLICY"])


class ConformanceNotification(NamedTuple):
    event_index: int
    case_id: str
    score: Optional[float]  # None while the case has no transition yet
    observations: int

    @property
    def pending(self) -> bool:
        return self.score is None

    def to_line(self) -> str:
        score = "pending" if self.score is None else format_decimal(self.score)
        return f"{self.event_index}\t{self.case_id}\t{score}\t{self.observations}"


def lookup(
    model: PreparedModel, source: str, target: str, unknown_policy: str = "zero"
) -> float:
    """Entry of S for ``source -> target``.

    A label outside the model index gives 0.0 under the ``zero`` policy and
    the flower floor ``(1 - alpha) / |A|`` under ``uniform-floor``.
    """
    position = model.index.position
    i = position.get(source)
    j = position.get(target)
    if i is None or j is None:
        return 0.0 if unknown_policy == "zero" else model.floor
    return model.table[i][j]


class OnlineChecker:
    """Single-consumer state machine turning stream events into notifications.

    Cases are kept in least-recently-updated order. Time is a counter
    bumped on each event, so no two cases share an update time and the
    first entry is always the one to evict.
    """

    def __init__(self, config: CheckerConfig):
        self.config = config
        self.capacity = config.capacity
        self.now = 0
        self.peak_size = 0
        self.evictions = 0
        self._cases: "OrderedDict[str, CaseState]" = OrderedDict()

        model = config.model
        self._table = model.table
        self._position = model.index.position
        self._denominator = model.denominator
        self._unknown = 0.0 if config.unknown_policy == "zero" else model.floor

    def process_event(self, event: StreamEvent) -> ConformanceNotification:
        self.now += 1
        case_id = event.case_id
        cases = self._cases
        state = cases.get(case_id)

        if state is None:
            cases[case_id] = CaseState(event.accomplishment, 0.0, 0, self.now)
            notification = ConformanceNotification(
                event.arrival_index, case_id, None, 0
            )
        else:
            i = self._position.get(state.last_accomplishment)
            j = self._position.get(event.accomplishment)
            if i is None or j is None:
                probability = self._unknown
            else:
                probability = self._table[i][j]
            state.observations += 1
            state.mean += (probability - state.mean) / state.observations
            state.last_accomplishment = event.accomplishment
            state.last_update = self.now
            cases.move_to_end(case_id)
            notification = ConformanceNotification(
                event.arrival_index,
                case_id,
                min(1.0, state.mean / self._denominator),
                state.observations,
            )

        while len(cases) > self.capacity:
            self._evict()
        if len(cases) > self.peak_size:
            self.peak_size = len(cases)
        return notification

    def _evict(self):
        case_id, state = self._cases.popitem(last=False)
        self.evictions += 1
        logger.debug("Evicting case %s (last update %s)", case_id, state.last_update)
        signals.case_evicted.send(self, case_id=case_id, state=state)

    def get(self, case_id: str) -> Optional[CaseState]:
        return self._cases.get(case_id)

    def __contains__(self, case_id):
        return case_id in self._cases

    def __len__(self):
        return len(self._cases)


def final_notifications(
    checker: OnlineChecker, stream: Iterable[StreamEvent]
) -> Dict[str, ConformanceNotification]:
    """Feed ``stream`` to ``checker`` and keep the last notification per case,
    in order of first appearance."""
    finals: Dict[str, ConformanceNotification] = {}
    for event in stream:
        finals[event.case_id] = checker.process_event(event)
    return finals


def _sequential_events(log: EventLog, attribute: str, policy: str):
    index = 0
    for case_id, trace in log.cases():
        for label in project(trace, attribute, policy, case_id):
            index += 1
            yield StreamEvent(case_id, label, index)


def check_log_notifications(
    log: EventLog, attribute: str, config: CheckerConfig, policy: str = "fail"
) -> Dict[str, ConformanceNotification]:
    """Final notification of every case of ``log``, replayed trace by trace
    with enough capacity that no case is evicted."""
    capacity = max(config.capacity, len(log), 1)
    checker = OnlineChecker(
        CheckerConfig(config.model, capacity, config.unknown_policy)
    )
    return final_notifications(checker, _sequential_events(log, attribute, policy))


def check_log(
    model: PreparedModel,
    log: EventLog,
    attribute: str,
    config: Optional[CheckerConfig] = None,
    policy: str = "fail",
) -> Dict[str, Optional[float]]:
    """Final Soft Conformance of each case; single-event cases are None."""
    if config is None:
        config = CheckerConfig(model)
    elif config.model is not model:
        config = CheckerConfig(model, config.capacity, config.unknown_policy)
    finals = check_log_notifications(log, attribute, config, policy)
    return {case_id: n.score for case_id, n in finals.items()}
