import csv
import io
import os
import socket
import threading
from contextlib import redirect_stdout

import numpy as np

from softconform import get_config, main, parse_arguments, signals
from softconform.models import read_model, write_model
from softconform.readers import read_csv_log
from softconform.tests.support import (
    log_path,
    running_example_model,
    temporary_folder,
    unittest,
)

RUNNING_EXAMPLE = log_path("running_example.csv")


def free_port():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


class TestParseOverrides(unittest.TestCase):
    base = ["show", "model.txt"]

    def test_flags(self):
        for flag in ["-e", "--extra-settings"]:
            args = parse_arguments(self.base + [flag, "k=1"])
            self.assertDictEqual(args.overrides, {"k": 1})

    def test_parse_multiple_items(self):
        args = parse_arguments(self.base + "-e k1=1 k2=2".split())
        self.assertDictEqual(args.overrides, {"k1": 1, "k2": 2})

    def test_parse_valid_json(self):
        json_values_python_values_map = {
            '""': "",
            "null": None,
            '"string"': "string",
            '["foo", 12, "4", {}]': ["foo", 12, "4", {}],
        }
        for k, v in json_values_python_values_map.items():
            args = parse_arguments(self.base + ["-e", "k=" + k])
            self.assertDictEqual(args.overrides, {"k": v})

    def test_parse_invalid_syntax(self):
        invalid_items = ["k= 1", "k =1", "k", "k v"]
        for item in invalid_items:
            with self.assertRaises(SystemExit):
                parse_arguments(self.base + f"-e {item}".split())

    def test_parse_invalid_json(self):
        invalid_json = {
            "",
            "False",
            "True",
            "None",
            "some other string",
            '{"foo": bar}',
            "[foo]",
        }
        for v in invalid_json:
            with self.assertRaises(SystemExit):
                parse_arguments(self.base + ["-e", "k=" + v])


class TestGetConfigFromArgs(unittest.TestCase):
    def test_overrides_known_keys(self):
        args = parse_arguments(
            ["check", "m.txt", "log.csv", "-e", "CAPACITY=7", 'ATTRIBUTE="originator"']
        )
        config = get_config(args)
        self.assertEqual(config["CAPACITY"], 7)
        self.assertEqual(config["ATTRIBUTE"], "originator")

    def test_arguments(self):
        args = parse_arguments(
            ["check", "m.txt", "log.csv", "--m", "5", "--alpha", "0.5", "-a", "originator"]
        )
        self.assertEqual(
            get_config(args), {"CAPACITY": 5, "ALPHA": 0.5, "ATTRIBUTE": "originator"}
        )

    def test_timestamp_column_implies_timestamp_ordering(self):
        args = parse_arguments(["learn", "log.csv", "-o", "m.txt", "--timestamp-column", "time"])
        config = get_config(args)
        self.assertEqual(config["ORDERING"], "timestamp")
        self.assertEqual(config["TIMESTAMP_COLUMN"], "time")

    def test_listen_address(self):
        args = parse_arguments(["monitor", "m.txt", "--listen", "9000"])
        config = get_config(args)
        self.assertEqual((config["BIND"], config["PORT"]), ("127.0.0.1", 9000))

    def test_no_header(self):
        args = parse_arguments(["learn", "log.csv", "-o", "m.txt", "--no-header"])
        self.assertIs(get_config(args)["HAS_HEADER"], False)
        args = parse_arguments(["learn", "log.csv", "-o", "m.txt"])
        self.assertNotIn("HAS_HEADER", get_config(args))

    def test_one_source_only(self):
        with self.assertRaises(SystemExit):
            parse_arguments(["monitor", "m.txt", "--listen", "9000", "--replay", "x.csv"])
        with self.assertRaises(SystemExit):
            parse_arguments(["monitor", "m.txt"])

    def test_command_is_required(self):
        with self.assertRaises(SystemExit) as cm:
            parse_arguments([])
        self.assertEqual(cm.exception.code, 2)


class CommandTestCase(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self._folder = temporary_folder()
        self.folder = self._folder.__enter__()

    def tearDown(self):
        self._folder.__exit__(None, None, None)
        super().tearDown()

    def path(self, name):
        return os.path.join(self.folder, name)

    def run_main(self, *argv):
        """Run the command line, returning what it printed on stdout."""
        output = io.StringIO()
        with redirect_stdout(output):
            main(list(argv))
        return output.getvalue()

    def assertExits(self, code, *argv):
        with self.assertRaises(SystemExit) as cm:
            self.run_main(*argv)
        self.assertEqual(cm.exception.code, code)

    def unprepared_model(self):
        path = self.path("model.txt")
        write_model(running_example_model(), path)
        return path

    def prepared_model(self):
        path = self.path("prepared.txt")
        write_model(running_example_model(0.5), path)
        return path

    def read_scores(self, path):
        with open(path, encoding="utf-8", newline="") as handle:
            return {row["case_id"]: row["soft_conformance"] for row in csv.DictReader(handle)}

    def read_notifications(self, path):
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
        header = [line for line in lines if line.startswith("#")]
        rows = [line.split("\t") for line in lines if not line.startswith("#")]
        return header, rows


class TestLearnAndPrepare(CommandTestCase):
    def test_learn(self):
        out = self.path("model.txt")
        printed = self.run_main("learn", RUNNING_EXAMPLE, "-o", out)
        self.assertEqual(printed.strip(), "accomplishments=3 traces=4 events=13")
        self.assertEqual(read_model(out), running_example_model())

    def test_learn_and_prepare_at_once(self):
        out = self.path("prepared.txt")
        self.run_main("learn", RUNNING_EXAMPLE, "-o", out, "--alpha", "0.5")
        model = read_model(out)
        self.assertEqual(model.alpha, 0.5)
        np.testing.assert_allclose(
            model.probs,
            [[0.27, 0.57, 0.17], [0.17, 0.17, 0.66], [0.17, 0.17, 0.17]],
            atol=0.01,
        )

    def test_alpha_out_of_range(self):
        self.assertExits(2, "learn", RUNNING_EXAMPLE, "-o", self.path("m.txt"), "--alpha", "1.2")
        self.assertFalse(os.path.exists(self.path("m.txt")))

    def test_missing_log(self):
        self.assertExits(1, "learn", self.path("missing.csv"), "-o", self.path("m.txt"))

    def test_prepare(self):
        out = self.path("prepared.txt")
        self.run_main("prepare", self.unprepared_model(), "--alpha", "0.5", "-o", out)
        self.assertEqual(read_model(out), running_example_model(0.5))

    def test_prepare_at_alpha_one_keeps_the_matrix(self):
        out = self.path("prepared.txt")
        self.run_main("prepare", self.unprepared_model(), "--alpha", "1", "-o", out)
        np.testing.assert_array_equal(read_model(out).probs, running_example_model().probs)

    def test_prepare_twice(self):
        self.assertExits(
            2, "prepare", self.prepared_model(), "--alpha", "0.5", "-o", self.path("x.txt")
        )

    def test_show(self):
        printed = self.run_main("show", self.prepared_model())
        self.assertIn("Prepared model", printed)
        self.assertIn("0.1667", printed)


class TestCheckAndMonitor(CommandTestCase):
    def check(self):
        out = self.path("scores.csv")
        self.run_main("check", self.prepared_model(), RUNNING_EXAMPLE, "-o", out)
        return self.read_scores(out)

    def test_check(self):
        scores = self.check()
        self.assertEqual(list(scores), ["1", "2", "3", "4"])
        self.assertAlmostEqual(float(scores["1"]), 0.925, places=12)
        self.assertAlmostEqual(float(scores["4"]), 0.75, places=12)

    def test_check_to_stdout(self):
        printed = self.run_main("check", self.prepared_model(), RUNNING_EXAMPLE)
        self.assertTrue(printed.startswith("case_id,soft_conformance,observations\r\n"))

    def test_check_prepares_on_the_fly(self):
        out = self.path("scores.csv")
        self.run_main(
            "check", self.unprepared_model(), RUNNING_EXAMPLE, "--alpha", "0.5", "-o", out
        )
        self.assertEqual(self.read_scores(out), self.check())

    def test_check_needs_a_prepared_model(self):
        self.assertExits(2, "check", self.unprepared_model(), RUNNING_EXAMPLE)

    def test_monitor_replay_agrees_with_check(self):
        out = self.path("notifications.txt")
        self.run_main(
            "monitor",
            self.prepared_model(),
            "--replay",
            RUNNING_EXAMPLE,
            "--schedule",
            "round-robin",
            "-o",
            out,
        )
        header, rows = self.read_notifications(out)
        self.assertEqual(
            header,
            [f"# source=replay:{RUNNING_EXAMPLE} schedule=round-robin seed=0 capacity=1000"],
        )
        self.assertEqual([int(row[0]) for row in rows], list(range(1, 14)))
        finals = {row[1]: row[2] for row in rows}
        self.assertEqual(finals, self.check())

    def test_monitor_with_one_slot(self):
        out = self.path("notifications.txt")
        self.run_main(
            "monitor",
            self.prepared_model(),
            "--replay",
            RUNNING_EXAMPLE,
            "--schedule",
            "round-robin",
            "--m",
            "1",
            "-o",
            out,
        )
        _, rows = self.read_notifications(out)
        self.assertEqual(len(rows), 13)
        # round-robin: 1A 2A 3A 4A 1B 2B 3B 4A 1C 2C 3C 4B 4C
        self.assertEqual(
            [row[1] for row in rows],
            ["1", "2", "3", "4", "1", "2", "3", "4", "1", "2", "3", "4", "4"],
        )
        # every arrival but the last finds its case evicted
        for row in rows[:12]:
            self.assertEqual(row[2:], ["pending", "0"])
        self.assertEqual(rows[4], ["5", "1", "pending", "0"])
        self.assertEqual(rows[12][1], "4")
        self.assertAlmostEqual(float(rows[12][2]), 1.0, places=12)
        self.assertEqual(rows[12][3], "1")

    def test_monitor_finalized_signal(self):
        finished = []

        def on_finalized(checker):
            finished.append((checker.now, checker.evictions, checker.peak_size))

        signals.monitor_finalized.connect(on_finalized)
        try:
            self.run_main(
                "monitor",
                self.prepared_model(),
                "--replay",
                RUNNING_EXAMPLE,
                "--schedule",
                "sequential",
                "--m",
                "2",
                "-o",
                self.path("notifications.txt"),
            )
        finally:
            signals.monitor_finalized.disconnect(on_finalized)
        self.assertEqual(finished, [(13, 2, 2)])

    def test_monitor_input_file(self):
        wire = self.path("events.txt")
        with open(wire, "w", encoding="utf-8") as handle:
            handle.write("c1,A\nc1,B\nnot a line\nc1,C\n")
        out = self.path("notifications.txt")
        self.run_main("monitor", self.prepared_model(), "--input", wire, "-o", out)
        header, rows = self.read_notifications(out)
        self.assertTrue(header[0].startswith(f"# source=input:{wire} schedule=-"))
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[0][2], "pending")
        self.assertAlmostEqual(float(rows[1][2]), 0.85, places=12)
        self.assertAlmostEqual(float(rows[2][2]), 0.925, places=12)

    def test_listen_loop_back(self):
        model = self.prepared_model()
        port = free_port()
        out = self.path("notifications.txt")
        failures = []

        def monitor():
            try:
                main(
                    [
                        "monitor",
                        model,
                        "--listen",
                        f"127.0.0.1:{port}",
                        "--connections",
                        "1",
                        "-o",
                        out,
                    ]
                )
            except BaseException as e:
                failures.append(e)

        thread = threading.Thread(target=monitor, daemon=True)
        thread.start()
        printed = self.run_main(
            "emit",
            RUNNING_EXAMPLE,
            "--to",
            f"127.0.0.1:{port}",
            "--schedule",
            "round-robin",
            "--retries",
            "10",
        )
        thread.join(30)
        self.assertFalse(thread.is_alive())
        self.assertEqual(failures, [])
        self.assertTrue(printed.startswith("lines=13 "))

        header, rows = self.read_notifications(out)
        self.assertEqual(header[0], f"# source=tcp:127.0.0.1:{port} schedule=- seed=0 capacity=1000")
        self.assertEqual(len(rows), 13)
        self.assertEqual({row[1]: row[2] for row in rows}, self.check())


class TestEvaluationCommands(CommandTestCase):
    def write(self, name, text):
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
        return path

    def test_correlate(self):
        scores = self.write(
            "scores.csv",
            "case_id,soft_conformance,observations\nc1,0,1\nc2,0.5,1\nc3,1,1\n",
        )
        fitness = self.write("fitness.csv", "case_id,metric\nc1,1\nc2,2\nc3,3\n")
        printed = self.run_main("correlate", scores, fitness)
        self.assertEqual(printed.strip(), "r=1 p=0 n=3 unmatched=0 pending=0")

    def test_correlate_too_few_cases(self):
        scores = self.write("scores.csv", "case_id,soft_conformance\nc1,0\nc2,pending\n")
        fitness = self.write("fitness.csv", "case_id,metric\nc1,1\nc2,2\n")
        self.assertExits(2, "correlate", scores, fitness)

    def test_bench(self):
        out = self.path("throughput.csv")
        printed = self.run_main("bench", "--duration", "0.2", "-o", out)
        self.assertTrue(printed.startswith("events="))
        with open(out, encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["bucket_start_s", "events"])
        self.assertGreater(sum(int(events) for _, events in rows[1:]), 0)

    def test_bench_replaying_a_log(self):
        out = self.path("throughput.csv")
        printed = self.run_main(
            "bench",
            self.prepared_model(),
            "--replay",
            RUNNING_EXAMPLE,
            "--duration",
            "0.2",
            "--m",
            "2",
            "-o",
            out,
        )
        self.assertIn("capacity=2", printed)

    def test_noise(self):
        out = self.path("noisy.csv")
        printed = self.run_main(
            "noise",
            RUNNING_EXAMPLE,
            "--kind",
            "insert-label",
            "--intensity",
            "0.4",
            "--seed",
            "3",
            "-o",
            out,
        )
        self.assertEqual(printed.strip(), "traces=4 events=18 seed=3")
        noisy = read_csv_log(out)
        self.assertEqual(len(noisy), 4)
        self.assertEqual(noisy.event_count, 18)

    def test_noise_intensity_out_of_range(self):
        self.assertExits(
            2,
            "noise",
            RUNNING_EXAMPLE,
            "--kind",
            "swap-adjacent",
            "--intensity",
            "2",
            "-o",
            self.path("noisy.csv"),
        )
