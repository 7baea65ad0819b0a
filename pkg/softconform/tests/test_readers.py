import os

from softconform import signals
from softconform.events import Event, project_log
from softconform.readers import (
    CsvLogSchema,
    LogFormatError,
    Readers,
    read_csv_log,
    read_xes_log,
)
from softconform.tests.support import (
    LoggedTestCase,
    get_settings,
    log_path,
    temporary_folder,
    unittest,
)
from softconform.utils import SoftConformError, ValidationError


class CsvTestCase(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self._folder = temporary_folder()
        self.folder = self._folder.__enter__()

    def tearDown(self):
        self._folder.__exit__(None, None, None)
        super().tearDown()

    def write(self, content, name="log.csv"):
        path = os.path.join(self.folder, name)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(content)
        return path


class TestReadCsvLog(CsvTestCase):
    def test_running_example(self):
        log = read_csv_log(log_path("running_example.csv"))
        self.assertEqual(
            project_log(log, "name"),
            {("A", "B", "C"): 3, ("A", "A", "B", "C"): 1},
        )
        self.assertEqual([c for c, _ in log.cases()], ["1", "2", "3", "4"])

    def test_grouping(self):
        path = self.write("case,name\nc1,A\nc2,X\nc1,B\nc2,Y\n")
        log = read_csv_log(path)
        self.assertEqual(len(log), 2)
        self.assertEqual(project_log(log, "name"), {("A", "B"): 1, ("X", "Y"): 1})

    def test_header_only(self):
        log = read_csv_log(self.write("case,name\n"))
        self.assertEqual(len(log), 0)

    def test_every_other_column_is_an_attribute(self):
        log = read_csv_log(log_path("handover.csv"))
        _, trace = next(log.cases())
        self.assertEqual(trace[0], Event(name="register", originator="alice"))

    def test_empty_cells_are_absent(self):
        log = read_csv_log(self.write("case,name,originator\n1,A,\n1,B,bob\n"))
        _, trace = next(log.cases())
        self.assertEqual(trace[0], Event(name="A"))

    def test_duplicate_header(self):
        with self.assertRaises(LogFormatError) as context:
            read_csv_log(self.write("case,name,name\n1,A,B\n"))
        self.assertEqual(context.exception.line, 1)

    def test_unknown_case_column(self):
        with self.assertRaises(LogFormatError):
            read_csv_log(self.write("id,name\n1,A\n"))

    def test_malformed_row(self):
        with self.assertRaises(LogFormatError) as context:
            read_csv_log(log_path("broken_row.csv"))
        self.assertEqual(context.exception.line, 3)
        self.assertIn("broken_row.csv:3", str(context.exception))

    def test_empty_case_id(self):
        with self.assertRaises(LogFormatError) as context:
            read_csv_log(self.write("case,name\n1,A\n,B\n"))
        self.assertEqual(context.exception.line, 3)

    def test_quoted_fields(self):
        log = read_csv_log(self.write('case,name\n1,"A, then B"\n1,"say ""hi"""\n'))
        self.assertEqual(project_log(log, "name"), {("A, then B", 'say "hi"'): 1})

    def test_delimiter(self):
        path = self.write("case;name\n1;A\n1;B\n")
        log = read_csv_log(path, CsvLogSchema(delimiter=";"))
        self.assertEqual(project_log(log, "name"), {("A", "B"): 1})

    def test_without_header(self):
        path = self.write("1,A\n1,B\n2,C\n")
        log = read_csv_log(path, CsvLogSchema(case_column="1", has_header=False))
        self.assertEqual(project_log(log, "2"), {("A", "B"): 1, ("C",): 1})

    def test_timestamp_ordering(self):
        schema = CsvLogSchema(ordering="timestamp", timestamp_column="time")
        log = read_csv_log(log_path("timestamps.csv"), schema)
        self.assertEqual(project_log(log, "name"), {("A", "B", "C"): 1, ("W", "X"): 1})

    def test_file_order_is_the_default(self):
        log = read_csv_log(log_path("timestamps.csv"))
        self.assertEqual(project_log(log, "name"), {("B", "A", "C"): 1, ("X", "W"): 1})

    def test_timestamp_ordering_is_stable(self):
        path = self.write("case,name,time\n1,B,5\n1,A,5\n1,C,1\n")
        schema = CsvLogSchema(ordering="timestamp", timestamp_column="time")
        self.assertEqual(project_log(read_csv_log(path, schema), "name"), {("C", "B", "A"): 1})

    def test_bad_timestamp(self):
        path = self.write("case,name,time\n1,A,5\n1,B,yesterday\n")
        schema = CsvLogSchema(ordering="timestamp", timestamp_column="time")
        with self.assertRaises(LogFormatError) as context:
            read_csv_log(path, schema)
        self.assertEqual(context.exception.line, 3)

    def test_unknown_timestamp_column(self):
        schema = CsvLogSchema(ordering="timestamp", timestamp_column="when")
        with self.assertRaises(LogFormatError):
            read_csv_log(log_path("timestamps.csv"), schema)

    def test_timestamp_ordering_needs_a_column(self):
        with self.assertRaises(ValidationError):
            read_csv_log(log_path("timestamps.csv"), CsvLogSchema(ordering="timestamp"))


class TestReadXesLog(LoggedTestCase):
    def test_names_and_case_ids(self):
        log = read_xes_log(log_path("sample.xes"))
        self.assertEqual(
            [case_id for case_id, _ in log.cases()], ["case-1", "case-2", "trace-3"]
        )
        self.assertEqual(
            project_log(log, "name"), {("A", "B"): 1, ("A",): 1, ("C",): 1}
        )

    def test_resources_become_originators(self):
        log = read_xes_log(log_path("sample.xes"))
        _, trace = next(log.cases())
        self.assertEqual([e["originator"] for e in trace], ["r1", "r2"])

    def test_typed_attributes(self):
        log = read_xes_log(log_path("sample.xes"))
        _, trace = next(log.cases())
        first = trace[0]
        self.assertEqual(first["time:timestamp"], "2019-06-24T10:00:00+02:00")
        self.assertEqual(first["cost"], "12")
        self.assertEqual(first["weight"], "0.5")
        self.assertEqual(first["urgent"], "true")

    def test_not_xml(self):
        with self.assertRaises(LogFormatError) as context:
            read_xes_log(log_path("not_xml.xes"))
        self.assertIsNotNone(context.exception.line)

    def test_event_outside_a_trace(self):
        with self.assertRaises(LogFormatError) as context:
            read_xes_log(log_path("orphan_event.xes"))
        self.assertEqual(context.exception.line, 9)

    def test_empty_trace_is_skipped(self):
        with temporary_folder() as folder:
            path = os.path.join(folder, "empty.xes")
            with open(path, "w", encoding="utf-8") as handle:
                handle.write(
                    "<log><trace><string key='concept:name' value='t'/></trace>"
                    "<trace><event><string key='concept:name' value='A'/></event>"
                    "</trace></log>"
                )
            log = read_xes_log(path)
        self.assertEqual(len(log), 1)
        self.assertLogCountEqual(count=1, msg="Skipping empty trace t")


class TestReaders(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.readers = Readers(get_settings())

    def test_extensions(self):
        self.assertEqual(set(self.readers.extensions), {"csv", "xes"})

    def test_dispatch_on_extension(self):
        self.assertEqual(len(self.readers.read_log(log_path("running_example.csv"))), 4)
        self.assertEqual(len(self.readers.read_log(log_path("sample.xes"))), 3)

    def test_explicit_format(self):
        with temporary_folder() as folder:
            path = os.path.join(folder, "log.txt")
            with open(path, "w", encoding="utf-8") as handle:
                handle.write("case,name\n1,A\n")
            self.assertEqual(len(self.readers.read_log(path, "csv")), 1)
            with self.assertRaises(ValidationError):
                self.readers.read_log(path)

    def test_missing_file(self):
        with self.assertRaises(SoftConformError):
            self.readers.read_log(log_path("nowhere.csv"))

    def test_settings_reach_the_csv_reader(self):
        readers = Readers(get_settings(ORDERING="timestamp", TIMESTAMP_COLUMN="time"))
        log = readers.read_log(log_path("timestamps.csv"))
        self.assertIn(("A", "B", "C"), project_log(log, "name"))

    def test_log_read_signal(self):
        received = []

        def receiver(sender, path, log):
            received.append((path, len(log)))

        signals.log_read.connect(receiver)
        try:
            self.readers.read_log(log_path("running_example.csv"))
        finally:
            signals.log_read.disconnect(receiver)
        self.assertEqual(received, [(log_path("running_example.csv"), 4)])
