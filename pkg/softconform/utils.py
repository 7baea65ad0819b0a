from __future__ import annotations

import datetime
import logging
import os
from contextlib import contextmanager
from typing import IO, Generator, Tuple

import dateutil.parser
import numpy as np
from dateutil.tz import tzutc

logger = logging.getLogger(__name__)


class SoftConformError(Exception):
    """Base class of every error raised by softconform.

    ``exitcode`` is picked up by the command line entry point.
    """

    exitcode = 1


class ValidationError(SoftConformError):
    """A user supplied value is out of range or otherwise unusable."""

    exitcode = 2


def format_decimal(value: float) -> str:
    """Shortest decimal rendering that reads back to the same float.

    Never uses exponent notation, so ``1e-05`` is written ``0.00001``.
    """
    return np.format_float_positional(float(value), unique=True, trim="-")


def parse_timestamp(value: str) -> datetime.datetime:
    """Return an aware datetime for an ISO-8601 string or integer epoch.

    Naive ISO values are taken as UTC. Raises ValueError otherwise.
    """
    value = value.strip()
    try:
        seconds = int(value)
    except ValueError:
        pass
    else:
        return datetime.datetime.fromtimestamp(seconds, tz=tzutc())

    try:
        parsed = dateutil.parser.isoparse(value)
    except (TypeError, ValueError, OverflowError):
        raise ValueError(f"{value!r} is not an ISO-8601 date or integer epoch")
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=tzutc())
    return parsed


def parse_address(address: str, default_host: str = "127.0.0.1") -> Tuple[str, int]:
    """Split ``host:port`` (or a bare ``port``) into a socket address."""
    host, sep, port = address.rpartition(":")
    if not sep:
        host = default_host
    try:
        number = int(port)
    except ValueError:
        raise ValidationError(f"Invalid address {address!r}, expected HOST:PORT")
    if not 0 <= number <= 65535:
        raise ValidationError(f"Port {number} is out of range")
    return host or default_host, number


@contextmanager
def open_output(path: str | None, newline: str | None = None) -> Generator[IO, None, None]:
    """Open ``path`` for writing, or yield stdout when path is None or ``-``."""
    if path is None or path == "-":
        import sys

        yield sys.stdout
        return

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline=newline) as handle:
        yield handle
