import copy
import logging

from softconform.log import LimitFilter
from softconform.models import AlphaRangeError
from softconform.settings import DEFAULT_CONFIG, configure_settings, read_settings
from softconform.tests.support import LoggedTestCase, get_settings
from softconform.utils import ValidationError


class TestSettingsConfiguration(LoggedTestCase):
    """Overrides replace the default values and are checked before use."""

    def test_read_empty_settings(self):
        # Ensure no override results in default settings.
        settings = read_settings(None)
        self.assertDictEqual(settings, copy.deepcopy(DEFAULT_CONFIG))

    def test_overrides(self):
        settings = read_settings({"ATTRIBUTE": "originator", "CAPACITY": 3})
        self.assertEqual(settings["ATTRIBUTE"], "originator")
        self.assertEqual(settings["CAPACITY"], 3)
        self.assertEqual(settings["SCHEDULE"], DEFAULT_CONFIG["SCHEDULE"])

    def test_settings_return_independent(self):
        # Make sure that the results from one settings call doesn't
        # effect past or future instances.
        settings = read_settings()
        settings["LOG_FILTER"].append((logging.WARNING, "x"))
        self.assertEqual(read_settings()["LOG_FILTER"], [])
        self.assertEqual(DEFAULT_CONFIG["LOG_FILTER"], [])

    def test_misconfigured_type_falls_back(self):
        settings = configure_settings(get_settings(ATTRIBUTE=5))
        self.assertEqual(settings["ATTRIBUTE"], "name")
        self.assertLogCountEqual(
            count=1,
            msg="Detected misconfigured ATTRIBUTE",
            level=logging.WARNING,
        )

    def test_log_filter(self):
        configure_settings(
            get_settings(LOG_FILTER=[(logging.WARNING, "Skipping line %s")])
        )
        self.assertIn((logging.WARNING, "Skipping line %s"), LimitFilter._ignore)

    def test_choices(self):
        for key, value in (
            ("ORDERING", "random"),
            ("FORMAT", "json"),
            ("MISSING_ATTRIBUTE", "ignore"),
            ("UNKNOWN_POLICY", "uniform"),
            ("SCHEDULE", "burst"),
        ):
            with self.assertRaises(ValidationError, msg=key):
                configure_settings(get_settings(**{key: value}))

    def test_timestamp_ordering_needs_a_column(self):
        with self.assertRaises(ValidationError):
            configure_settings(get_settings(ORDERING="timestamp"))
        settings = configure_settings(
            get_settings(ORDERING="timestamp", TIMESTAMP_COLUMN="time")
        )
        self.assertEqual(settings["TIMESTAMP_COLUMN"], "time")

    def test_positive_integers(self):
        for key in (
            "CAPACITY",
            "FLUSH_EVERY",
            "HANDOFF_SIZE",
            "MAX_LINE_BYTES",
            "CONCURRENT_CASES",
        ):
            for value in (0, -3, True, 2.5):
                with self.assertRaises(ValidationError):
                    configure_settings(get_settings(**{key: value}))

    def test_delimiter(self):
        with self.assertRaises(ValidationError):
            configure_settings(get_settings(DELIMITER=";;"))

    def test_alpha(self):
        self.assertEqual(configure_settings(get_settings(ALPHA="0.5"))["ALPHA"], 0.5)
        with self.assertRaises(AlphaRangeError):
            configure_settings(get_settings(ALPHA=1.2))

    def test_rate(self):
        self.assertIsNone(configure_settings(get_settings(RATE=0))["RATE"])
        self.assertEqual(configure_settings(get_settings(RATE=50))["RATE"], 50)
        with self.assertRaises(ValidationError):
            configure_settings(get_settings(RATE=-1))

    def test_retries_and_duration(self):
        with self.assertRaises(ValidationError):
            configure_settings(get_settings(RETRIES=-1))
        with self.assertRaises(ValidationError):
            configure_settings(get_settings(DURATION=0))
