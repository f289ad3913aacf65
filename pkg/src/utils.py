"""
Utility functions for trojanforge

This module provides small helpers shared by the experiment modules:
- Colored terminal logging output
- CSV export with provenance comment lines
- Hashing helpers for config fingerprints and derived seeds
- Relative-error arithmetic used by the numeric checks
"""

import csv
import hashlib
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union


RESET = '\033[0m'

# check outcome -> (symbol, ANSI color)
OUTCOME_STYLES = {
    'passed': ('✅', '\033[92m'),
    'failed': ('❌', '\033[91m'),
    'warning': ('⚠️ ', '\033[93m'),
    'info': ('ℹ️ ', '\033[94m'),
}

LEVEL_COLORS = {
    'DEBUG': '\033[96m',
    'INFO': '\033[94m',
    'WARNING': '\033[93m',
    'ERROR': '\033[91m',
    'CRITICAL': '\033[1m\033[91m',
}

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def format_log_message(message: str, level: str = "info", color: bool = True) -> str:
    """
    Prefix a check outcome with its symbol, optionally colored.

    Examples:
        >>> format_log_message("dominance 100/100", "passed", color=False)
        '✅ dominance 100/100'
    """
    symbol, color_code = OUTCOME_STYLES.get(level.lower(), ('•', ''))
    if color and color_code:
        return f"{color_code}{symbol} {message}{RESET}"
    return f"{symbol} {message}"


class ColoredFormatter(logging.Formatter):
    """Formatter that colors the level name."""

    def format(self, record):
        record = logging.makeLogRecord(record.__dict__)
        level_color = LEVEL_COLORS.get(record.levelname)
        if level_color:
            record.levelname = f"{level_color}{record.levelname}{RESET}"
        return super().format(record)


def create_logger_with_colors(name: str, level: int = logging.INFO, color: bool = True) -> logging.Logger:
    """
    Create a logger with colored output formatting.

    Existing handlers on the named logger are replaced, so calling this twice
    for the same name never duplicates output.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.handlers = []
    logger.propagate = False

    handler = logging.StreamHandler()
    formatter_class = ColoredFormatter if color else logging.Formatter
    handler.setFormatter(formatter_class(LOG_FORMAT, datefmt=LOG_DATE_FORMAT))
    logger.addHandler(handler)
    return logger


def parse_log_level(level: Union[str, int]) -> int:
    """Translate 'DEBUG'/'INFO'/... (or an int) into a logging level."""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    return value


def sha256_hex(data: Union[str, bytes]) -> str:
    """SHA-256 hex digest of text (UTF-8) or bytes."""
    if isinstance(data, str):
        data = data.encode('utf-8')
    return hashlib.sha256(data).hexdigest()


def derive_seed(base_seed: int, *labels: Any) -> int:
    """
    Derive a reproducible 32-bit seed from a base seed and labels.

    Examples:
        >>> derive_seed(0, "sweep", 3) == derive_seed(0, "sweep", 3)
        True
    """
    text = "|".join([str(base_seed)] + [str(label) for label in labels])
    return int(sha256_hex(text)[:8], 16)


def run_timestamp() -> str:
    """Timestamp used in output file names."""
    return datetime.now().strftime('%Y%m%d_%H%M%S')


def format_float(value: Optional[float]) -> str:
    """Stable text form for CSV cells; None becomes NA."""
    if value is None:
        return "NA"
    return repr(float(value))


def export_to_csv(
    rows: Sequence[Dict[str, Any]],
    filepath: Union[str, Path],
    fieldnames: Sequence[str],
    comments: Iterable[str] = ()
) -> Path:
    """
    Export rows to a CSV file with leading '#' comment lines.

    Floats are written with repr() so reruns produce byte-identical files.

    Args:
        rows: Row dictionaries keyed by field name
        filepath: Output CSV path
        fieldnames: Column order (always written as a header row)
        comments: Lines written before the header, each prefixed with '# '

    Returns:
        Path to the created file
    """
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    with open(filepath, 'w', newline='', encoding='utf-8') as f:
        for comment in comments:
            f.write(f"# {comment}\n")
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({
                key: format_float(value) if isinstance(value, float) or value is None else value
                for key, value in row.items()
            })

    logging.getLogger(__name__).debug(f"Wrote {len(rows)} rows to {filepath}")
    return filepath


def read_csv_rows(filepath: Union[str, Path]) -> List[Dict[str, str]]:
    """Read a CSV written by export_to_csv, skipping comment lines."""
    with open(filepath, 'r', encoding='utf-8') as f:
        lines = [line for line in f if not line.startswith('#')]
    return list(csv.DictReader(lines))


def relative_error(a: float, b: float, floor: float = 1e-12) -> float:
    """
    Symmetric relative error |a - b| / max(|a|, |b|).

    Returns 0 when both values are within `floor` of each other in absolute
    terms, so that two exact zeros compare equal.
    """
    diff = abs(a - b)
    if diff <= floor:
        return 0.0
    return diff / max(abs(a), abs(b))
