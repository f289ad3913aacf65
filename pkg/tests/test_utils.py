"""
Unit tests for logging, seeding and CSV helpers
"""

import logging
import os
import shutil
import sys
import tempfile
import unittest

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from utils import (
    LOG_DATE_FORMAT, LOG_FORMAT, RESET, ColoredFormatter, create_logger_with_colors, derive_seed, export_to_csv,
    format_log_message, parse_log_level, read_csv_rows
)


class TestLogging(unittest.TestCase):
    """Tests for the colored logging helpers"""

    def test_outcome_symbols(self):
        """Test the plain symbol of each check outcome"""
        self.assertEqual(format_log_message("ok", "passed", color=False), "✅ ok")
        self.assertEqual(format_log_message("bad", "FAILED", color=False), "❌ bad")
        self.assertEqual(format_log_message("other", "unknown", color=False), "• other")

    def test_colored_outcome_is_reset(self):
        """Test that a colored message ends with the reset code"""
        message = format_log_message("ok", "passed")
        self.assertTrue(message.endswith(RESET))
        self.assertIn("✅ ok", message)

    def test_formatter_colors_level_only(self):
        """Test that the level name is colored and the record itself is left alone"""
        formatter = ColoredFormatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT)
        record = logging.LogRecord("x", logging.WARNING, __file__, 1, "careful", None, None)
        text = formatter.format(record)
        self.assertIn("careful", text)
        self.assertIn(RESET, text)
        self.assertEqual(record.levelname, "WARNING")

    def test_logger_is_not_duplicated(self):
        """Test that creating the same logger twice keeps a single handler"""
        create_logger_with_colors("trojanforge-test", logging.DEBUG)
        logger = create_logger_with_colors("trojanforge-test", logging.ERROR, color=False)
        self.assertEqual(len(logger.handlers), 1)
        self.assertEqual(logger.level, logging.ERROR)
        self.assertNotIsInstance(logger.handlers[0].formatter, ColoredFormatter)

    def test_parse_log_level(self):
        """Test names, integers and unknown names"""
        self.assertEqual(parse_log_level("warning"), logging.WARNING)
        self.assertEqual(parse_log_level(10), 10)
        with self.assertRaises(ValueError):
            parse_log_level("LOUD")


class TestSeedsAndCsv(unittest.TestCase):
    """Tests for derived seeds and CSV export"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_derive_seed(self):
        """Test that labels separate streams and the same labels repeat"""
        self.assertEqual(derive_seed(1, "a", 2), derive_seed(1, "a", 2))
        self.assertNotEqual(derive_seed(1, "a", 2), derive_seed(1, "a", 3))
        self.assertLess(derive_seed(5, "x"), 2 ** 32)

    def test_csv_round_trip_with_missing_values(self):
        """Test comment lines, repr floats and NA for missing values"""
        path = export_to_csv(
            [{"alpha": 0.1, "acc": None, "tag": "clean"}],
            os.path.join(self.temp_dir, "nested", "out.csv"),
            ["alpha", "acc", "tag"],
            comments=["config_hash=abc"]
        )
        with open(path, encoding='utf-8') as f:
            self.assertEqual(f.readline(), "# config_hash=abc\n")
        rows = read_csv_rows(path)
        self.assertEqual(rows, [{"alpha": "0.1", "acc": "NA", "tag": "clean"}])


if __name__ == '__main__':
    unittest.main()
