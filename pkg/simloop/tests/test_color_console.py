import unittest
from unittest.mock import patch
import sys

from simloop.color_console import (
    print_success, print_warning, print_error, print_info, print_table,
    COLOR_SUCCESS, COLOR_WARNING, COLOR_ERROR, COLOR_INFO, COLOR_RESET
)


class TestColorConsole(unittest.TestCase):

    @patch('simloop.color_console.IS_TTY', True)
    @patch('builtins.print')
    def test_print_success_color(self, mock_print):
        """Test that print_success uses the correct color code."""
        print_success("Success message")
        mock_print.assert_called_once()
        self.assertEqual(mock_print.call_args[0][0], f"{COLOR_SUCCESS}Success message{COLOR_RESET}")

    @patch('simloop.color_console.IS_TTY', True)
    @patch('builtins.print')
    def test_print_warning_goes_to_stderr(self, mock_print):
        print_warning("Warning message")
        self.assertEqual(mock_print.call_args[0][0], f"{COLOR_WARNING}Warning message{COLOR_RESET}")
        self.assertEqual(mock_print.call_args[1]['file'], sys.stderr)

    @patch('simloop.color_console.IS_TTY', True)
    @patch('builtins.print')
    def test_print_error_color(self, mock_print):
        print_error("Error message")
        self.assertEqual(mock_print.call_args[0][0], f"{COLOR_ERROR}Error message{COLOR_RESET}")
        self.assertEqual(mock_print.call_args[1]['file'], sys.stderr)

    @patch('simloop.color_console.IS_TTY', False)
    @patch('builtins.print')
    def test_no_color_when_not_tty(self, mock_print):
        print_info("Plain message")
        mock_print.assert_called_once()
        self.assertEqual(mock_print.call_args[0][0], "Plain message")

    @patch('builtins.print')
    def test_quiet_mode_suppresses_output(self, mock_print):
        print_success("Should not be printed", quiet=True)
        print_warning("Should not be printed", quiet=True)
        print_error("Should not be printed", quiet=True)
        print_info("Should not be printed", quiet=True)
        mock_print.assert_not_called()

    @patch('simloop.color_console.IS_TTY', False)
    @patch('builtins.print')
    def test_stage_prefix(self, mock_print):
        print_warning("no feature matches", stage="estimate")
        self.assertEqual(mock_print.call_args[0][0], "[estimate] no feature matches")

    @patch('simloop.color_console.IS_TTY', False)
    @patch('builtins.print')
    def test_print_table_layout(self, mock_print):
        """Columns are padded to the widest cell and floats use 6 significant digits."""
        print_table(["name", "value"], [["S", 2.0], ["dt", 0.000123456789]], title="domain")
        lines = [c[0][0] for c in mock_print.call_args_list]
        self.assertEqual(lines, [
            "domain",
            "name  value",
            "----  -----------",
            "S     2",
            "dt    0.000123457",
        ])

    @patch('simloop.color_console.IS_TTY', True)
    @patch('builtins.print')
    def test_print_table_title_color(self, mock_print):
        print_table(["a"], [[1]], title="summary")
        mock_print.assert_any_call(f"{COLOR_INFO}summary{COLOR_RESET}")


if __name__ == '__main__':
    unittest.main()
