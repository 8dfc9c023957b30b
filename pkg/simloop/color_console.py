"""Console helpers for the simloop CLI.

Informational lines go to stdout, warnings and errors to stderr. Colour is only
emitted on a terminal and only when colorama is installed.
"""
import sys
from typing import Optional, Sequence

try:
    import colorama
    colorama.init()

    COLOR_SUCCESS = colorama.Fore.GREEN
    COLOR_WARNING = colorama.Fore.YELLOW
    COLOR_ERROR = colorama.Fore.RED
    COLOR_INFO = colorama.Fore.CYAN
    COLOR_RESET = colorama.Style.RESET_ALL

    IS_TTY = sys.stdout.isatty()

except ImportError:
    COLOR_SUCCESS = COLOR_WARNING = COLOR_ERROR = COLOR_INFO = COLOR_RESET = ''
    IS_TTY = False


def _paint(text: str, color: str) -> str:
    return f"{color}{text}{COLOR_RESET}" if IS_TTY else text


def _emit(message: str, color: str, to_stderr: bool, quiet: Optional[bool], stage: Optional[str]):
    if quiet is True:
        return
    if stage:
        message = f"[{stage}] {message}"
    print(_paint(message, color), file=sys.stderr if to_stderr else sys.stdout)


def print_success(message: str, quiet: Optional[bool] = False, stage: Optional[str] = None):
    """Green, stdout."""
    _emit(message, COLOR_SUCCESS, False, quiet, stage)


def print_warning(message: str, quiet: Optional[bool] = False, stage: Optional[str] = None):
    """Yellow, stderr."""
    _emit(message, COLOR_WARNING, True, quiet, stage)


def print_error(message: str, quiet: Optional[bool] = False, stage: Optional[str] = None):
    """Red, stderr."""
    _emit(message, COLOR_ERROR, True, quiet, stage)


def print_info(message: str, quiet: Optional[bool] = False, stage: Optional[str] = None):
    """Cyan, stdout."""
    _emit(message, COLOR_INFO, False, quiet, stage)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def print_table(headers: Sequence[str], rows: Sequence[Sequence], title: Optional[str] = None):
    """Prints rows as a left-aligned text table with an optional title line.

    Tables are the payload of `inspect`, so they ignore quiet mode.
    """
    cells = [[_format_cell(v) for v in row] for row in rows]
    widths = [max([len(h)] + [len(row[i]) for row in cells]) for i, h in enumerate(headers)]

    def line(values):
        return "  ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()

    if title:
        print(_paint(title, COLOR_INFO))
    print(line(headers))
    print("  ".join("-" * w for w in widths))
    for row in cells:
        print(line(row))
