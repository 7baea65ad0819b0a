import logging
import warnings
from collections import defaultdict

from rich.console import Console
from rich.logging import RichHandler

__all__ = ["init", "FatalLogError"]

# stdout carries notifications and scores; every diagnostic goes to stderr
console = Console(stderr=True)


class FatalLogError(RuntimeError):
    """A warning or error was logged while ``--fatal`` was in effect."""

    exitcode = 1

    def __init__(self, levelname):
        super().__init__(f"{levelname.capitalize()} encountered")


class LimitFilter(logging.Filter):
    """
    Keep long-running readers and monitors from flooding stderr.

    Each warning is shown once. Records carrying a ``limit_msg`` share a group,
    and once a group reaches ``_threshold`` records its summary message is shown
    in place of the record and the rest of the group is dropped:

        logger.warning("Skipping malformed line %r", line,
                       extra={"limit_msg": "Skipping more malformed lines"})

    Templates or messages listed in the ``LOG_FILTER`` setting are dropped
    unless debug output is enabled.
    """

    LOGS_DEDUP_MIN_LEVEL = logging.WARNING

    _ignore = set()
    _raised_messages = set()
    _threshold = 5
    _group_count = defaultdict(int)
    suppressed = 0

    @classmethod
    def reset(cls):
        cls._ignore = set()
        cls._raised_messages = set()
        cls._threshold = 5
        cls._group_count = defaultdict(int)
        cls.suppressed = 0

    def filter(self, record):
        if record.levelno > self.LOGS_DEDUP_MIN_LEVEL:
            return True
        # spent groups are dropped before their message is remembered
        if (
            self._group_spent(record)
            or self._repeated(record)
            or self._ignored(record)
        ):
            LimitFilter.suppressed += 1
            return False
        return self._within_group(record)

    def _repeated(self, record):
        key = (record.levelno, record.getMessage())
        if key in self._raised_messages:
            return True
        self._raised_messages.add(key)
        return False

    def _ignored(self, record):
        if logging.getLogger().getEffectiveLevel() <= logging.DEBUG:
            return False
        return (record.levelno, record.msg) in self._ignore or (
            record.levelno,
            record.getMessage(),
        ) in self._ignore

    def _group_spent(self, record):
        group = getattr(record, "limit_msg", None)
        if not group:
            return False
        return self._group_count[(record.levelno, group)] >= self._threshold

    def _within_group(self, record):
        group = getattr(record, "limit_msg", None)
        if not group:
            return True
        key = (record.levelno, group)
        self._group_count[key] += 1
        if self._group_count[key] == self._threshold:
            record.msg = group
            record.args = getattr(record, "limit_args", ())
        return True


class FatalLogger(logging.Logger):
    """
    Logger class installed for the whole process: it applies the shared
    LimitFilter and turns warnings or errors into FatalLogError on demand.
    """

    limit_filter = LimitFilter()
    warnings_fatal = False
    errors_fatal = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.addFilter(FatalLogger.limit_filter)

    def warning(self, *args, stacklevel=1, **kwargs):
        super().warning(*args, stacklevel=stacklevel + 1, **kwargs)
        if FatalLogger.warnings_fatal:
            raise FatalLogError("warning")

    def error(self, *args, stacklevel=1, **kwargs):
        super().error(*args, stacklevel=stacklevel + 1, **kwargs)
        if FatalLogger.errors_fatal:
            raise FatalLogError("error")


logging.setLoggerClass(FatalLogger)
# the root logger is created before setLoggerClass runs
logging.getLogger().__class__ = FatalLogger


def init(level=None, fatal="", handler=None, name=None, logs_dedup_min_level=None):
    """Configure stderr logging for one command-line run."""
    FatalLogger.warnings_fatal = fatal.startswith("warning")
    FatalLogger.errors_fatal = bool(fatal)

    if handler is None:
        handler = RichHandler(console=console, show_path=False, markup=False)
    logging.basicConfig(
        level=level, format="%(message)s", datefmt="[%H:%M:%S]", handlers=[handler]
    )
    if level:
        logging.getLogger(name).setLevel(level)
    if logs_dedup_min_level:
        LimitFilter.LOGS_DEDUP_MIN_LEVEL = logs_dedup_min_level


def log_warnings():
    logging.captureWarnings(True)
    warnings.simplefilter("default", DeprecationWarning)
    init(logging.DEBUG, name="py.warnings")
