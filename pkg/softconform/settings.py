import copy
import logging
from typing import Any, Dict, Optional

from softconform.log import LimitFilter
from softconform.utils import ValidationError

logger = logging.getLogger(__name__)

Settings = Dict[str, Any]

DEFAULT_CONFIG = {
    # log ingestion
    "ATTRIBUTE": "name",
    "FORMAT": None,
    "CASE_COLUMN": "case",
    "DELIMITER": ",",
    "HAS_HEADER": True,
    "ORDERING": "file-order",
    "TIMESTAMP_COLUMN": None,
    "MISSING_ATTRIBUTE": "fail",
    # model preparation and checking
    "ALPHA": None,
    "CAPACITY": 1000,
    "UNKNOWN_POLICY": "zero",
    "FLUSH_EVERY": 100,
    # streams
    "BIND": "127.0.0.1",
    "PORT": 7070,
    "HANDOFF_SIZE": 10000,
    "MAX_LINE_BYTES": 65536,
    "SCHEDULE": "sequential",
    "SEED": 0,
    "RATE": None,
    "RETRIES": 5,
    # evaluation
    "DURATION": 60.0,
    "CONCURRENT_CASES": 500,
    "METRIC_COLUMN": "metric",
    "LOG_FILTER": [],
}

CHOICES = {
    "FORMAT": (None, "csv", "xes"),
    "ORDERING": ("file-order", "timestamp"),
    "MISSING_ATTRIBUTE": ("fail", "skip"),
    "UNKNOWN_POLICY": ("zero", "uniform-floor"),
    "SCHEDULE": ("sequential", "round-robin", "shuffle"),
}

POSITIVE_INTEGERS = (
    "CAPACITY",
    "FLUSH_EVERY",
    "HANDOFF_SIZE",
    "MAX_LINE_BYTES",
    "CONCURRENT_CASES",
)


def read_settings(override: Optional[Settings] = None) -> Settings:
    """Return the defaults updated with *override*, validated."""
    settings = dict(copy.deepcopy(DEFAULT_CONFIG), **(override or {}))
    return configure_settings(settings)


def configure_settings(settings: Settings) -> Settings:
    """Provide error checking and warnings for the given settings.
    Also, specify the log messages to be ignored.
    """
    log_filter = settings.get("LOG_FILTER", DEFAULT_CONFIG["LOG_FILTER"])
    LimitFilter._ignore.update({tuple(item) for item in log_filter})

    # check settings that must be a particular type
    for key, types in [
        ("ATTRIBUTE", str),
        ("CASE_COLUMN", str),
        ("DELIMITER", str),
        ("HAS_HEADER", bool),
        ("METRIC_COLUMN", str),
        ("BIND", str),
    ]:
        if key in settings and not isinstance(settings[key], types):
            value = settings.pop(key)
            logger.warning(
                "Detected misconfigured %s (%s), falling back to the default (%s)",
                key,
                value,
                DEFAULT_CONFIG[key],
            )
            settings[key] = DEFAULT_CONFIG[key]

    for key, choices in CHOICES.items():
        if settings.get(key) not in choices:
            raise ValidationError(
                "{} must be one of {}, not {!r}".format(
                    key, ", ".join(str(c) for c in choices if c), settings.get(key)
                )
            )

    if len(settings["DELIMITER"]) != 1:
        raise ValidationError(
            f"DELIMITER must be a single character, not {settings['DELIMITER']!r}"
        )

    if settings["ORDERING"] == "timestamp" and not settings.get("TIMESTAMP_COLUMN"):
        raise ValidationError("Timestamp ordering needs TIMESTAMP_COLUMN")

    for key in POSITIVE_INTEGERS:
        value = settings[key]
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ValidationError(f"{key} must be a positive integer, not {value!r}")

    alpha = settings.get("ALPHA")
    if alpha is not None:
        from softconform.models import check_alpha

        settings["ALPHA"] = check_alpha(alpha)

    rate = settings.get("RATE")
    if rate is not None and (not isinstance(rate, (int, float)) or rate < 0):
        raise ValidationError(f"RATE must be a non-negative number, not {rate!r}")
    if rate == 0:
        # zero means unthrottled, same as no rate at all
        settings["RATE"] = None

    if not isinstance(settings["RETRIES"], int) or settings["RETRIES"] < 0:
        raise ValidationError("RETRIES must be a non-negative integer")

    if settings["DURATION"] <= 0:
        raise ValidationError("DURATION must be positive")

    return settings
