import argparse
import importlib.metadata
import json
import logging
import sys

# softconform.log has to be the first softconform module to be loaded
# because logging.setLoggerClass has to be called before logging.getLogger
from softconform.log import LimitFilter, console
from softconform.log import init as init_logging
from softconform import signals  # noqa: I100
from softconform.checker import (
    CheckerConfig,
    OnlineChecker,
    check_log_notifications,
)
from softconform.evaluation import (
    NOISE_KINDS,
    NoiseSpec,
    inject_noise,
    join_scores,
    pearson,
    random_model,
    random_walk_stream,
    read_fitness_csv,
    read_scores_csv,
    repeat_stream,
    stress,
    write_throughput_csv,
)
from softconform.models import (
    learn_model,
    prepare_for_conformance,
    read_model,
    render_model,
    write_model,
)
from softconform.readers import Readers
from softconform.server import StreamListener
from softconform.settings import CHOICES, read_settings
from softconform.streams import (
    ReplaySchedule,
    emit_tcp,
    read_wire_stream,
    replay_log,
    throttle,
)
from softconform.utils import ValidationError, open_output, parse_address
from softconform.writers import Writer, write_scores_csv

try:
    __version__ = importlib.metadata.version("softconform")
except Exception:
    __version__ = "unknown"

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class ParseOverrides(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        overrides = {}
        for item in values:
            try:
                k, v = item.split("=", 1)
            except ValueError:
                parser.error(
                    "Extra settings must be specified as KEY=VALUE pairs "
                    f"but you specified {item}"
                )
            try:
                overrides[k] = json.loads(v)
            except json.decoder.JSONDecodeError:
                parser.error(
                    f"Invalid JSON value: {v}. "
                    "Values specified via -e / --extra-settings flags "
                    "must be in JSON notation. "
                    "Use -e KEY='\"string\"' to specify a string value; "
                    "-e KEY=null to specify None; "
                    "-e KEY=false (or true) to specify False (or True)."
                )
        setattr(namespace, self.dest, overrides)


def _load_log(args, settings):
    return Readers(settings).read_log(args.log, settings["FORMAT"])


def _load_prepared(path, settings):
    """Read a model, preparing it on the fly when --alpha is given."""
    model = read_model(path)
    alpha = settings["ALPHA"]
    if model.alpha is None:
        if alpha is None:
            raise ValidationError(
                f"{path} holds an unprepared model, prepare it or pass --alpha"
            )
        return prepare_for_conformance(model, alpha)
    if alpha is not None and alpha != model.alpha:
        logger.warning(
            "Ignoring --alpha %s, %s is already prepared with alpha %s",
            alpha,
            path,
            model.alpha,
        )
    return model


def cmd_learn(args, settings):
    log = _load_log(args, settings)
    model = learn_model(
        log, settings["ATTRIBUTE"], settings["ALPHA"], settings["MISSING_ATTRIBUTE"]
    )
    write_model(model, args.out)
    print(
        f"accomplishments={len(model.index)} traces={len(log)} "
        f"events={log.event_count}"
    )


def cmd_prepare(args, settings):
    model = read_model(args.model)
    write_model(prepare_for_conformance(model, settings["ALPHA"]), args.out)


def cmd_check(args, settings):
    model = _load_prepared(args.model, settings)
    log = _load_log(args, settings)
    finals = check_log_notifications(
        log,
        settings["ATTRIBUTE"],
        CheckerConfig.from_settings(model, settings),
        settings["MISSING_ATTRIBUTE"],
    )
    with open_output(args.out, newline="") as handle:
        write_scores_csv(finals.values(), handle)


def cmd_monitor(args, settings):
    model = _load_prepared(args.model, settings)
    checker = OnlineChecker(CheckerConfig.from_settings(model, settings))
    header = {
        "schedule": "-",
        "seed": settings["SEED"],
        "capacity": settings["CAPACITY"],
    }

    with open_output(args.out) as handle, Writer(settings).notifications(
        handle
    ) as writer:

        def on_event(event):
            writer.write(checker.process_event(event))

        if args.replay:
            args.log = args.replay
            schedule = ReplaySchedule.from_settings(settings)
            header["schedule"] = schedule.mode
            writer.write_header(source=f"replay:{args.replay}", **header)
            stream = replay_log(
                _load_log(args, settings),
                settings["ATTRIBUTE"],
                schedule,
                settings["MISSING_ATTRIBUTE"],
            )
            for event in throttle(stream, schedule.rate):
                on_event(event)
        elif args.input:
            writer.write_header(source=f"input:{args.input}", **header)
            if args.input == "-":
                for event in read_wire_stream(sys.stdin):
                    on_event(event)
            else:
                with open(args.input, encoding="utf-8") as lines:
                    for event in read_wire_stream(lines):
                        on_event(event)
        else:
            listener = StreamListener(
                (settings["BIND"], settings["PORT"]),
                settings["HANDOFF_SIZE"],
                settings["MAX_LINE_BYTES"],
            )
            host, port = listener.start()
            writer.write_header(source=f"tcp:{host}:{port}", **header)
            handle.flush()
            try:
                listener.serve(on_event, args.connections)
            finally:
                listener.stop()

    signals.monitor_finalized.send(checker)
    logger.info(
        "Processed %s events, %s evictions, at most %s cases at once",
        checker.now,
        checker.evictions,
        checker.peak_size,
    )


def cmd_emit(args, settings):
    schedule = ReplaySchedule.from_settings(settings)
    stream = replay_log(
        _load_log(args, settings),
        settings["ATTRIBUTE"],
        schedule,
        settings["MISSING_ATTRIBUTE"],
    )
    address = parse_address(args.to, settings["BIND"])
    report = emit_tcp(stream, address, schedule.rate, settings["RETRIES"])
    print(f"lines={report.lines} seconds={report.seconds:.3f} rate={report.rate:.1f}")


def cmd_bench(args, settings):
    if args.model:
        model = _load_prepared(args.model, settings)
    else:
        alpha = 0.5 if settings["ALPHA"] is None else settings["ALPHA"]
        model = prepare_for_conformance(random_model(seed=settings["SEED"]), alpha)

    if args.replay:
        args.log = args.replay
        source = repeat_stream(
            replay_log(
                _load_log(args, settings),
                settings["ATTRIBUTE"],
                ReplaySchedule.from_settings(settings),
                settings["MISSING_ATTRIBUTE"],
            )
        )
    else:
        source = random_walk_stream(
            model, settings["SEED"], settings["CONCURRENT_CASES"]
        )

    report = stress(
        model,
        source,
        settings["DURATION"],
        settings["CAPACITY"],
        settings["UNKNOWN_POLICY"],
    )
    with open_output(args.out, newline="") as handle:
        write_throughput_csv(report, handle)
    if args.out and args.out != "-":
        print(report.summary())
    else:
        console.print(report.summary())


def cmd_correlate(args, settings):
    scores = read_scores_csv(args.scores)
    metrics = read_fitness_csv(args.fitness, settings["METRIC_COLUMN"])
    joined = join_scores(scores, metrics)
    correlation = pearson(joined.pairs)
    print(
        f"{correlation.summary()} unmatched={joined.unmatched} "
        f"pending={joined.pending}"
    )


def cmd_noise(args, settings):
    spec = NoiseSpec(args.kind, args.intensity, settings["SEED"])
    noisy = inject_noise(_load_log(args, settings), settings["ATTRIBUTE"], spec)
    Writer(settings).write_log(noisy, args.out)
    print(f"traces={len(noisy)} events={noisy.event_count} seed={spec.seed}")


def cmd_show(args, settings):
    from rich.console import Console

    Console().print(render_model(read_model(args.model)))


def _common_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_const",
        const=logging.INFO,
        dest="verbosity",
        help="Show all messages.",
    )
    parser.add_argument(
        "-q",
        "--quiet",
        action="store_const",
        const=logging.CRITICAL,
        dest="verbosity",
        help="Show only critical errors.",
    )
    parser.add_argument(
        "-D",
        "--debug",
        action="store_const",
        const=logging.DEBUG,
        dest="verbosity",
        help="Show all messages, including debug messages.",
    )
    parser.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        help="Show messages of this level and above.",
    )
    parser.add_argument(
        "--fatal",
        metavar="errors|warnings",
        choices=("errors", "warnings"),
        default="",
        help=(
            "Exit the program with non-zero status if any "
            "errors/warnings encountered."
        ),
    )
    parser.add_argument(
        "--logs-dedup-min-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help=(
            "Only enable log de-duplication for levels equal"
            " to or above the specified value"
        ),
    )
    parser.add_argument(
        "-e",
        "--extra-settings",
        dest="overrides",
        help="Specify one or more SETTING=VALUE pairs to "
        "override settings. VALUE must be in JSON notation: "
        "specify string values as SETTING='\"some string\"'; "
        "booleans as SETTING=true or SETTING=false; "
        "None as SETTING=null.",
        nargs="*",
        action=ParseOverrides,
        default={},
    )
    return parser


def _log_parser():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("event log")
    group.add_argument(
        "-a",
        "--attribute",
        help="Event attribute whose values are the accomplishments "
        "(use originator for the handover of work). (default: name)",
    )
    group.add_argument(
        "-f",
        "--format",
        choices=[c for c in CHOICES["FORMAT"] if c],
        help="Log format, guessed from the file extension if not given.",
    )
    group.add_argument("--case-column", help="CSV column holding the case id.")
    group.add_argument("--delimiter", help="CSV field delimiter.")
    group.add_argument(
        "--no-header",
        dest="has_header",
        action="store_false",
        default=None,
        help="The CSV has no header; columns are named 1, 2, ...",
    )
    group.add_argument(
        "--ordering",
        choices=CHOICES["ORDERING"],
        help="Order of the events within a trace. (default: file-order)",
    )
    group.add_argument(
        "--timestamp-column",
        help="CSV column to order events on; implies --ordering timestamp.",
    )
    group.add_argument(
        "--missing",
        choices=CHOICES["MISSING_ATTRIBUTE"],
        help="What to do with events lacking the attribute. (default: fail)",
    )
    return parser


def _checker_parser():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("checker")
    group.add_argument(
        "--alpha",
        type=float,
        help="Prepare an unprepared model with this weighting factor.",
    )
    group.add_argument(
        "-m",
        "--m",
        "--capacity",
        dest="capacity",
        type=int,
        help="Maximum number of cases tracked at once. (default: 1000)",
    )
    group.add_argument(
        "--unknown-policy",
        choices=CHOICES["UNKNOWN_POLICY"],
        help="Probability of a transition involving an unknown label. "
        "(default: zero)",
    )
    return parser


def _schedule_parser():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("replay")
    group.add_argument(
        "--schedule",
        choices=CHOICES["SCHEDULE"],
        help="How traces are intertwined. (default: sequential)",
    )
    group.add_argument("--seed", type=int, help="Seed of the shuffle. (default: 0)")
    group.add_argument(
        "--rate", type=float, help="Events per second, unthrottled if not given."
    )
    return parser


def parse_arguments(argv=None):
    parser = argparse.ArgumentParser(
        prog="softconform",
        description="Learn descriptive models from event logs and compute "
        "Soft Conformance over logs and event streams.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=__version__,
        help="Print the softconform version and exit.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    common = _common_parser()
    log_options = _log_parser()
    checker_options = _checker_parser()
    schedule_options = _schedule_parser()

    learn = subparsers.add_parser(
        "learn",
        parents=[common, log_options],
        help="Learn a descriptive model from an event log.",
    )
    learn.add_argument("log", help="Event log, CSV or XES.")
    learn.add_argument("-o", "--out", required=True, help="Model file to write.")
    learn.add_argument(
        "--alpha", type=float, help="Also prepare the model with this factor."
    )
    learn.set_defaults(func=cmd_learn)

    prepare = subparsers.add_parser(
        "prepare",
        parents=[common],
        help="Merge a descriptive model with the flower model.",
    )
    prepare.add_argument("model", help="Unprepared model file.")
    prepare.add_argument(
        "--alpha", type=float, required=True, help="Weighting factor in [0, 1]."
    )
    prepare.add_argument("-o", "--out", required=True, help="Model file to write.")
    prepare.set_defaults(func=cmd_prepare)

    check = subparsers.add_parser(
        "check",
        parents=[common, log_options, checker_options],
        help="Final Soft Conformance of every case of a log.",
    )
    check.add_argument("model", help="Prepared model file.")
    check.add_argument("log", help="Event log to check.")
    check.add_argument("-o", "--out", help="Scores CSV, stdout if not given.")
    check.set_defaults(func=cmd_check)

    monitor = subparsers.add_parser(
        "monitor",
        parents=[common, log_options, checker_options, schedule_options],
        help="Soft Conformance of every event of a stream.",
    )
    monitor.add_argument("model", help="Prepared model file.")
    source = monitor.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "-l", "--listen", metavar="[HOST:]PORT", help="Read events from TCP."
    )
    source.add_argument("--replay", metavar="LOG", help="Replay an event log.")
    source.add_argument(
        "--input", metavar="PATH", help="Read wire lines from a file, - for stdin."
    )
    monitor.add_argument(
        "--connections",
        type=int,
        help="Stop listening once this many producers have disconnected.",
    )
    monitor.add_argument(
        "--flush-every", type=int, help="Lines between flushes. (default: 100)"
    )
    monitor.add_argument(
        "--handoff-size",
        type=int,
        help="Events buffered between the listener and the checker.",
    )
    monitor.add_argument("-o", "--out", help="Notification file, stdout if not given.")
    monitor.set_defaults(func=cmd_monitor)

    emit = subparsers.add_parser(
        "emit",
        parents=[common, log_options, schedule_options],
        help="Replay an event log to a listening monitor.",
    )
    emit.add_argument("log", help="Event log to replay.")
    emit.add_argument("--to", required=True, metavar="[HOST:]PORT")
    emit.add_argument(
        "--retries", type=int, help="Reconnection attempts. (default: 5)"
    )
    emit.set_defaults(func=cmd_emit)

    bench = subparsers.add_parser(
        "bench",
        parents=[common, log_options, checker_options, schedule_options],
        help="Measure the sustained throughput of the checker.",
    )
    bench.add_argument(
        "model",
        nargs="?",
        help="Prepared model file; a random 20-label model if not given.",
    )
    bench.add_argument(
        "--replay", metavar="LOG", help="Loop over a replayed log as the source."
    )
    bench.add_argument(
        "--duration", type=float, help="Seconds to run. (default: 60)"
    )
    bench.add_argument(
        "--concurrent",
        type=int,
        help="Cases running side by side in the random source. (default: 500)",
    )
    bench.add_argument("-o", "--out", help="Throughput CSV, stdout if not given.")
    bench.set_defaults(func=cmd_bench)

    correlate = subparsers.add_parser(
        "correlate",
        parents=[common],
        help="Pearson's r between scores and an external metric.",
    )
    correlate.add_argument("scores", help="Scores CSV written by check.")
    correlate.add_argument("fitness", help="CSV with case_id and metric columns.")
    correlate.add_argument(
        "--metric-column", help="Column of the external metric. (default: metric)"
    )
    correlate.set_defaults(func=cmd_correlate)

    noise = subparsers.add_parser(
        "noise",
        parents=[common, log_options],
        help="Write a seeded noisy copy of an event log as CSV.",
    )
    noise.add_argument("log", help="Event log to corrupt.")
    noise.add_argument("--kind", choices=NOISE_KINDS, required=True)
    noise.add_argument(
        "--intensity",
        type=float,
        required=True,
        help="Fraction of the events affected, in [0, 1].",
    )
    noise.add_argument("--seed", type=int, help="Seed of the noise. (default: 0)")
    noise.add_argument("-o", "--out", required=True, help="CSV log to write.")
    noise.set_defaults(func=cmd_noise)

    show = subparsers.add_parser(
        "show", parents=[common], help="Print a model as a table."
    )
    show.add_argument("model", help="Model file.")
    show.set_defaults(func=cmd_show)

    args = parser.parse_args(argv)
    if args.log_level:
        args.verbosity = getattr(logging, args.log_level)
    if getattr(args, "connections", None) is not None and not args.listen:
        logger.warning("--connections without --listen has no effect")
    return args


# (argument name, setting name)
SETTINGS_ARGUMENTS = [
    ("attribute", "ATTRIBUTE"),
    ("format", "FORMAT"),
    ("case_column", "CASE_COLUMN"),
    ("delimiter", "DELIMITER"),
    ("has_header", "HAS_HEADER"),
    ("ordering", "ORDERING"),
    ("timestamp_column", "TIMESTAMP_COLUMN"),
    ("missing", "MISSING_ATTRIBUTE"),
    ("alpha", "ALPHA"),
    ("capacity", "CAPACITY"),
    ("unknown_policy", "UNKNOWN_POLICY"),
    ("flush_every", "FLUSH_EVERY"),
    ("handoff_size", "HANDOFF_SIZE"),
    ("schedule", "SCHEDULE"),
    ("seed", "SEED"),
    ("rate", "RATE"),
    ("retries", "RETRIES"),
    ("duration", "DURATION"),
    ("concurrent", "CONCURRENT_CASES"),
    ("metric_column", "METRIC_COLUMN"),
]


def get_config(args):
    """Builds a config dictionary based on supplied `args`."""
    config = {}
    for name, key in SETTINGS_ARGUMENTS:
        value = getattr(args, name, None)
        if value is not None:
            config[key] = value
    if getattr(args, "timestamp_column", None) and not getattr(args, "ordering", None):
        config["ORDERING"] = "timestamp"
    if getattr(args, "listen", None):
        config["BIND"], config["PORT"] = parse_address(args.listen)
    config.update(args.overrides)
    return config


def main(argv=None):
    args = parse_arguments(argv)
    logs_dedup_min_level = getattr(logging, args.logs_dedup_min_level)
    init_logging(
        level=args.verbosity,
        fatal=args.fatal,
        name=__name__,
        logs_dedup_min_level=logs_dedup_min_level,
    )

    logger.debug("softconform version: %s", __version__)
    logger.debug("Python version: %s", sys.version.split()[0])

    try:
        settings = read_settings(get_config(args))
        args.func(args, settings)
        if LimitFilter.suppressed:
            logger.info("%d repeated diagnostics suppressed", LimitFilter.suppressed)
    except KeyboardInterrupt:
        logger.warning("Keyboard interrupt received. Exiting.")
    except Exception as e:
        logger.critical("%s: %s", e.__class__.__name__, e)

        if args.verbosity == logging.DEBUG:
            console.print_exception()
        sys.exit(getattr(e, "exitcode", 1))
