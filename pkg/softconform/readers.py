import csv
import logging
import os
from typing import Dict, List, NamedTuple, Optional, Tuple

from lxml import etree

from softconform import signals
from softconform.events import EventLog, Trace
from softconform.utils import (
    SoftConformError,
    ValidationError,
    format_decimal,
    parse_timestamp,
)

logger = logging.getLogger(__name__)

XES_NAME = "concept:name"
XES_RESOURCE = "org:resource"

# XES keys renamed on the way in; everything else keeps its key
XES_KEY_MAP = {
    XES_NAME: "name",
    XES_RESOURCE: "originator",
}

XES_VALUE_TAGS = ("string", "date", "int", "float", "boolean", "id")


class LogFormatError(SoftConformError):
    """The log file does not follow its declared format."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        location = f"{path}:{line}" if line else str(path)
        super().__init__(f"{location}: {message}")


class CsvLogSchema(NamedTuple):
    """How to turn the rows of a CSV file into traces.

    ``ordering`` is ``file-order`` or ``timestamp``; the latter sorts each
    trace on ``timestamp_column``. Without a header, columns are named by
    their 1-based position.
    """

    case_column: str = "case"
    ordering: str = "file-order"
    timestamp_column: Optional[str] = None
    delimiter: str = ","
    has_header: bool = True

    @classmethod
    def from_settings(cls, settings):
        return cls(
            case_column=settings["CASE_COLUMN"],
            ordering=settings["ORDERING"],
            timestamp_column=settings["TIMESTAMP_COLUMN"],
            delimiter=settings["DELIMITER"],
            has_header=settings["HAS_HEADER"],
        )


def read_csv_log(path: str, schema: CsvLogSchema = CsvLogSchema()) -> EventLog:
    """Group the rows of a CSV file into an event log.

    Rows are grouped by ``schema.case_column`` in order of first appearance;
    every other non-empty cell becomes an event attribute.
    """
    if schema.ordering not in ("file-order", "timestamp"):
        raise ValidationError(f"Unknown ordering {schema.ordering!r}")
    if schema.ordering == "timestamp" and not schema.timestamp_column:
        raise ValidationError("Timestamp ordering needs a timestamp column")

    groups: Dict[str, List[Tuple[int, Dict[str, str]]]] = {}
    with open(path, encoding="utf-8-sig", newline="") as handle:
        reader = csv.reader(handle, delimiter=schema.delimiter, strict=True)
        header = None
        try:
            for row in reader:
                if header is None:
                    if schema.has_header:
                        header = _check_header(path, row, schema)
                        continue
                    header = [str(i) for i in range(1, len(row) + 1)]
                    _check_header(path, header, schema)
                if not row:
                    continue
                if len(row) != len(header):
                    raise LogFormatError(
                        path,
                        reader.line_num,
                        f"expected {len(header)} fields, found {len(row)}",
                    )
                values = dict(zip(header, row))
                case_id = values.pop(schema.case_column)
                if not case_id:
                    raise LogFormatError(path, reader.line_num, "empty case id")
                attributes = {name: value for name, value in values.items() if value}
                groups.setdefault(case_id, []).append((reader.line_num, attributes))
        except csv.Error as e:
            raise LogFormatError(path, reader.line_num, str(e)) from e

    if schema.ordering == "timestamp":
        for case_id, rows in groups.items():
            rows.sort(key=lambda row: _row_timestamp(path, row, schema))

    log = EventLog(
        (case_id, Trace(attributes for _, attributes in rows))
        for case_id, rows in groups.items()
    )
    logger.debug("Read %s cases from %s", len(log), path)
    return log


def _check_header(path, header, schema):
    seen = set()
    for name in header:
        if name in seen:
            raise LogFormatError(path, 1, f"duplicate column {name!r}")
        seen.add(name)
    if schema.case_column not in seen:
        raise LogFormatError(path, 1, f"unknown case column {schema.case_column!r}")
    if schema.ordering == "timestamp" and schema.timestamp_column not in seen:
        raise LogFormatError(
            path, 1, f"unknown timestamp column {schema.timestamp_column!r}"
        )
    return header


def _row_timestamp(path, row, schema):
    line, attributes = row
    try:
        return parse_timestamp(attributes[schema.timestamp_column])
    except KeyError:
        raise LogFormatError(path, line, "missing timestamp") from None
    except ValueError as e:
        raise LogFormatError(path, line, str(e)) from None


def _xes_value(element):
    """Render an XES attribute value as text.

    Numbers use their shortest decimal rendering and dates ISO-8601.
    """
    tag = etree.QName(element).localname
    value = element.get("value")
    if value is None:
        return None
    if tag == "date":
        return parse_timestamp(value).isoformat()
    if tag == "int":
        return str(int(value))
    if tag == "float":
        return format_decimal(float(value))
    if tag == "boolean":
        return value.strip().lower()
    return value


def _xes_attributes(path, element):
    attributes = {}
    for child in element:
        if not isinstance(child.tag, str):
            continue  # comments and processing instructions
        if etree.QName(child).localname not in XES_VALUE_TAGS:
            continue
        key = child.get("key")
        if not key:
            continue
        try:
            value = _xes_value(child)
        except ValueError as e:
            raise LogFormatError(path, child.sourceline, str(e)) from None
        if value:
            attributes[XES_KEY_MAP.get(key, key)] = value
    return attributes


def read_xes_log(path: str) -> EventLog:
    """Read the subset of XES made of ``log``/``trace``/``event`` elements.

    ``concept:name`` becomes ``name``, ``org:resource`` becomes
    ``originator`` and the trace ``concept:name`` becomes the case id.
    Extensions, globals and classifiers are ignored.
    """
    try:
        tree = etree.parse(path)
    except etree.XMLSyntaxError as e:
        raise LogFormatError(path, e.lineno, f"not XML: {e.msg}") from None
    except OSError as e:
        raise LogFormatError(path, None, str(e)) from None

    root = tree.getroot()
    cases = []
    for element in root.iter(etree.Element):
        name = etree.QName(element).localname
        if name == "event":
            parent = element.getparent()
            if parent is None or etree.QName(parent).localname != "trace":
                raise LogFormatError(path, element.sourceline, "event outside a trace")
        elif name == "trace":
            trace_attributes = _xes_attributes(path, element)
            case_id = trace_attributes.get("name") or f"trace-{len(cases) + 1}"
            events = [
                _xes_attributes(path, child)
                for child in element
                if isinstance(child.tag, str)
                and etree.QName(child).localname == "event"
            ]
            if not events:
                logger.warning(
                    "Skipping empty trace %s at %s:%s",
                    case_id,
                    path,
                    element.sourceline,
                    extra={"limit_msg": "Skipping more empty traces"},
                )
                continue
            cases.append((case_id, Trace(events)))

    try:
        log = EventLog(cases)
    except ValueError as e:
        raise LogFormatError(path, None, str(e)) from None
    logger.debug("Read %s cases from %s", len(log), path)
    return log


class BaseLogReader:
    """Base class to read event logs.

    A reader class must have the following attributes:

    - enabled: (boolean) tell if the reader class is enabled.
    - file_extensions: a list of file extensions that the reader will process.
    """

    enabled = True
    file_extensions = []

    def __init__(self, settings):
        self.settings = settings

    def read(self, path):
        raise NotImplementedError


class CsvReader(BaseLogReader):
    file_extensions = ["csv"]

    def read(self, path):
        return read_csv_log(path, CsvLogSchema.from_settings(self.settings))


class XesReader(BaseLogReader):
    file_extensions = ["xes"]

    def read(self, path):
        return read_xes_log(path)


class Readers:
    """Interface for all log readers.

    Keeps a mapping of file extensions to reader instances, so the right one
    is used from the extension of the file, or from an explicit format.
    """

    def __init__(self, settings):
        self.settings = settings
        self.readers = {}

        for cls in BaseLogReader.__subclasses__():
            if not cls.enabled:
                continue
            for ext in cls.file_extensions:
                self.readers[ext] = cls(settings)

    @property
    def extensions(self):
        return self.readers.keys()

    def read_log(self, path: str, fmt: Optional[str] = None) -> EventLog:
        """Return the event log stored at ``path``."""
        if not fmt:
            _, ext = os.path.splitext(os.path.basename(path))
            fmt = ext[1:].lower()

        if fmt not in self.readers:
            raise ValidationError(
                f"Cannot tell the format of {path}, use --format "
                f"({', '.join(sorted(self.extensions))})"
            )
        if not os.path.isfile(path):
            raise SoftConformError(f"No such log file: {path}")

        log = self.readers[fmt].read(path)
        signals.log_read.send(self, path=path, log=log)
        return log
