"""Descriptive models: directly-follows counts, their row-normalised
sub-stochastic matrix, and the merge with the uniform "flower" matrix that
prepares a model for conformance checking.

Matrices are dense numpy arrays indexed by the sorted accomplishment labels
and are frozen once a model is built.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from rich.table import Table

from softconform import signals
from softconform.events import EventLog, project_log
from softconform.utils import SoftConformError, ValidationError, format_decimal

logger = logging.getLogger(__name__)

EPSILON = 1e-9

MODEL_MAGIC = "softconform-model"
MODEL_VERSION = "v1"


class EmptyLogError(SoftConformError):
    """There is nothing to learn a model from."""


class AlphaRangeError(ValidationError):
    """The weighting factor is outside [0, 1]."""


class AlreadyPreparedError(ValidationError):
    """Merging a prepared model again would not be idempotent."""


class ModelFormatError(SoftConformError):
    """The model file cannot be parsed."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class ModelVersionError(ModelFormatError):
    pass


class ModelDimensionError(ModelFormatError):
    pass


class ModelInvariantError(ModelFormatError):
    pass


def check_alpha(alpha) -> float:
    """Return ``alpha`` as a float, raising AlphaRangeError outside [0, 1]."""
    try:
        value = float(alpha)
    except (TypeError, ValueError):
        raise AlphaRangeError(f"alpha must be a number, not {alpha!r}") from None
    if not 0.0 <= value <= 1.0:  # also rejects NaN
        raise AlphaRangeError(f"alpha must be within [0, 1], not {alpha!r}")
    return value


def _frozen(matrix, dtype) -> np.ndarray:
    array = np.array(matrix, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class AccomplishmentIndex:
    """Sorted, distinct labels; the position of a label is its matrix index."""

    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("An accomplishment index needs at least one label")
        if any(not isinstance(label, str) or not label for label in labels):
            raise ValueError("Accomplishment labels must be non-empty text")
        if list(labels) != sorted(set(labels)):
            raise ValueError("Accomplishment labels must be distinct and sorted")

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> AccomplishmentIndex:
        return cls(tuple(sorted(set(labels))))

    @cached_property
    def position(self) -> Dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)


class _Matrix:
    """Shared behaviour of the square matrices keyed by an index."""

    index: AccomplishmentIndex

    def _check_shape(self, matrix):
        size = len(self.index)
        if matrix.shape != (size, size):
            raise ValueError(
                f"Matrix shape {matrix.shape} does not match {size} labels"
            )

    def __getitem__(self, pair: Tuple[str, str]):
        source, target = pair
        position = self.index.position
        return self._values()[position[source], position[target]].item()

    def _values(self) -> np.ndarray:
        raise NotImplementedError

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.index == other.index and np.array_equal(
            self._values(), other._values()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CountMatrix(_Matrix):
    """Directly-follows frequencies weighted by trace multiplicity."""

    index: AccomplishmentIndex
    counts: np.ndarray

    def __post_init__(self):
        counts = _frozen(self.counts, np.int64)
        self._check_shape(counts)
        if (counts < 0).any():
            raise ValueError("Directly-follows counts cannot be negative")
        object.__setattr__(self, "counts", counts)

    def _values(self):
        return self.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class DescriptiveModel(_Matrix):
    """Sub-stochastic transition matrix: non-negative, rows summing to at
    most one. A zero row marks an accomplishment never followed by another."""

    index: AccomplishmentIndex
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, np.float64)
        self._check_shape(probs)
        problem = _substochastic_problem(probs)
        if problem:
            raise ValueError(problem)
        object.__setattr__(self, "probs", probs)

    def _values(self):
        return self.probs

    alpha = None


@dataclass(frozen=True, eq=False)
class PreparedModel(_Matrix):
    """Model merged with the flower matrix, ``S = alpha P + (1 - alpha) U``.

    ``denominator`` is the largest entry S can hold, reached where P is 1,
    and normalises Soft Conformance into [0, 1]. ``source`` keeps P when the
    model was prepared in this process; it is None after reading a file.
    """

    index: AccomplishmentIndex
    probs: np.ndarray
    alpha: float
    denominator: float
    source: Optional[DescriptiveModel] = None

    def __post_init__(self):
        probs = _frozen(self.probs, np.float64)
        self._check_shape(probs)
        problem = _prepared_problem(probs, self.alpha, self.denominator)
        if problem:
            raise ValueError(problem)
        object.__setattr__(self, "probs", probs)

    def _values(self):
        return self.probs

    @property
    def floor(self) -> float:
        """The entry of S for a transition P never saw."""
        return (1.0 - self.alpha) / len(self.index)

    @cached_property
    def table(self) -> List[List[float]]:
        """Rows of S as plain floats, for constant-time lookups."""
        return self.probs.tolist()

    def __eq__(self, other):
        result = super().__eq__(other)
        if result is NotImplemented or not result:
            return result
        return self.alpha == other.alpha and self.denominator == other.denominator


Model = Union[DescriptiveModel, PreparedModel]


def _substochastic_problem(probs) -> Optional[str]:
    if not np.isfinite(probs).all():
        return "Transition probabilities must be finite"
    if (probs < 0).any():
        return "Transition probabilities cannot be negative"
    sums = probs.sum(axis=1)
    if (sums > 1.0 + EPSILON).any():
        row = int(np.argmax(sums))
        return f"Row {row + 1} sums to {sums[row]!r}, more than 1"
    return None


def _prepared_problem(probs, alpha, denominator) -> Optional[str]:
    problem = _substochastic_problem(probs)
    if problem:
        return problem
    if not 0.0 <= alpha <= 1.0:
        return f"alpha {alpha!r} is outside [0, 1]"
    if not 0.0 < denominator <= 1.0 + EPSILON:
        return f"Denominator {denominator!r} is outside (0, 1]"
    if probs.max() > denominator + EPSILON:
        return f"Entry {probs.max()!r} exceeds the denominator {denominator!r}"
    floor = (1.0 - alpha) / probs.shape[0]
    if probs.min() < floor - EPSILON:
        return f"Entry {probs.min()!r} is below the flower floor {floor!r}"
    return None


def count_directly_follows(
    log: EventLog, attribute: str, policy: str = "fail"
) -> CountMatrix:
    """Count, over all traces, how often each label directly follows another.

    Counts are weighted by trace multiplicity. Projecting on ``originator``
    rather than on the activity gives the handover-of-work matrix.
    """
    if not log:
        raise EmptyLogError("Cannot learn a model from an empty log")

    projected = project_log(log, attribute, policy)
    labels = {label for sequence in projected for label in sequence}
    if not labels:
        raise EmptyLogError(f"No event of the log carries {attribute!r}")
    index = AccomplishmentIndex.from_labels(labels)

    position = index.position
    counts = np.zeros((len(index), len(index)), dtype=np.int64)
    for sequence, multiplicity in projected.items():
        for source, target in zip(sequence, sequence[1:]):
            counts[position[source], position[target]] += multiplicity
    return CountMatrix(index, counts)


def normalize_counts(counts: CountMatrix) -> DescriptiveModel:
    """Divide each row by its total; rows without observations stay zero."""
    totals = counts.counts.sum(axis=1, keepdims=True)
    probs = np.divide(
        counts.counts,
        totals,
        out=np.zeros(counts.counts.shape, dtype=np.float64),
        where=totals > 0,
    )
    return DescriptiveModel(counts.index, probs)


def prepare_for_conformance(model: DescriptiveModel, alpha: float) -> PreparedModel:
    """Merge ``model`` with the flower matrix whose entries are all 1/|A|."""
    if isinstance(model, PreparedModel):
        raise AlreadyPreparedError("The model is already prepared (alpha is set)")
    alpha = check_alpha(alpha)
    floor = (1.0 - alpha) / len(model.index)
    # S at a probability-one entry and the denominator are the same float
    merged = alpha * model.probs + floor
    prepared = PreparedModel(
        model.index, merged, alpha=alpha, denominator=alpha + floor, source=model
    )
    signals.model_prepared.send(prepared)
    return prepared


def learn_model(
    log: EventLog, attribute: str, alpha: Optional[float] = None, policy: str = "fail"
) -> Model:
    """Count, normalise and, when ``alpha`` is given, prepare in one go."""
    model = normalize_counts(count_directly_follows(log, attribute, policy))
    signals.model_learned.send(model, log=log, attribute=attribute)
    logger.debug("Learned a model over %s labels", len(model.index))
    if alpha is not None:
        return prepare_for_conformance(model, alpha)
    return model


def write_model(model: Model, path: str) -> None:
    """Write ``model`` in the versioned text format.

    Probabilities use their shortest round-tripping decimal rendering, so
    reading the file back gives bit-identical matrices.
    """
    for label in model.index:
        if "," in label or "\n" in label or "\r" in label:
            raise ValidationError(
                f"Label {label!r} cannot be stored: commas and newlines are "
                "not supported in model labels"
            )

    alpha = "none" if model.alpha is None else format_decimal(model.alpha)
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"alpha={alpha}",
        "labels=" + ",".join(model.index.labels),
    ]
    lines.extend(" ".join(format_decimal(p) for p in row) for row in model.probs)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.debug("Wrote model over %s labels to %s", len(model.index), path)


def read_model(path: str) -> Model:
    """Read a model file, checking version, dimensions and invariants."""
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            lines = [line.rstrip("\r") for line in handle.read().split("\n")]
    except OSError as e:
        raise SoftConformError(f"Cannot read model {path}: {e.strerror}") from None
    except UnicodeDecodeError:
        raise ModelFormatError(path, "not a UTF-8 text file") from None

    while lines and not lines[-1]:
        lines.pop()
    if len(lines) < 3:
        raise ModelFormatError(path, "truncated header")

    magic, _, version = lines[0].partition(" ")
    if magic != MODEL_MAGIC:
        raise ModelFormatError(path, "not a softconform model file")
    if version != MODEL_VERSION:
        raise ModelVersionError(
            path, f"unsupported version {version!r}, expected {MODEL_VERSION}"
        )

    alpha_text = _header_value(path, lines[1], "alpha")
    alpha = None
    if alpha_text != "none":
        alpha = _parse_float(path, alpha_text)
        if not 0.0 <= alpha <= 1.0:
            raise ModelInvariantError(path, f"alpha {alpha_text} is outside [0, 1]")

    try:
        labels = _header_value(path, lines[2], "labels").split(",")
        index = AccomplishmentIndex(tuple(labels))
    except ValueError as e:
        raise ModelFormatError(path, str(e)) from None

    rows = lines[3:]
    size = len(index)
    if len(rows) != size:
        raise ModelDimensionError(
            path, f"{size} labels but a matrix of {len(rows)} rows"
        )
    matrix = []
    for number, row in enumerate(rows, 4):
        values = row.split(" ")
        if len(values) != size:
            raise ModelDimensionError(
                path, f"line {number} holds {len(values)} values, expected {size}"
            )
        matrix.append([_parse_float(path, value) for value in values])
    probs = np.array(matrix, dtype=np.float64)

    if alpha is None:
        problem = _substochastic_problem(probs)
        if problem:
            raise ModelInvariantError(path, problem)
        return DescriptiveModel(index, probs)

    denominator = alpha + (1.0 - alpha) / size
    problem = _prepared_problem(probs, alpha, denominator)
    if problem:
        raise ModelInvariantError(path, problem)
    return PreparedModel(index, probs, alpha=alpha, denominator=denominator)


def _header_value(path, line, key):
    name, sep, value = line.partition("=")
    if name != key or not sep:
        raise ModelFormatError(path, f"expected a {key}= line, found {line!r}")
    return value


def _parse_float(path, text):
    try:
        value = float(text)
    except ValueError:
        raise ModelFormatError(path, f"{text!r} is not a decimal") from None
    if not math.isfinite(value):
        raise ModelFormatError(path, f"{text!r} is not finite")
    return value


def render_model(model: Model, digits: int = 4) -> Table:
    """Lay the matrix out as a rich table, rows are sources."""
    if model.alpha is None:
        title = "Descriptive model"
    else:
        title = f"Prepared model (alpha={format_decimal(model.alpha)})"
    table = Table(title=title)
    table.add_column("from \\ to", style="bold")
    for label in model.index:
        table.add_column(label, justify="right")
    for label, row in zip(model.index, model.probs):
        table.add_row(label, *(f"{p:.{digits}f}" for p in row))
    return table
