"""
Exception hierarchy for trojanforge.

Every error raised on purpose by the library derives from TrojanForgeError so
the command-line harness can turn it into a clean exit status.
"""

from typing import Optional


class TrojanForgeError(Exception):
    """Base class for all trojanforge errors."""


class InvalidArgumentError(TrojanForgeError, ValueError):
    """Bad shape, count or range passed to a public operation."""


class DegenerateAlphaError(InvalidArgumentError):
    """Poisoning ratio selects no sample at all (floor(alpha * N) == 0)."""

    def __init__(self, alpha: float, n: int):
        self.alpha = alpha
        self.n = n
        super().__init__(f"floor(alpha * N) = 0 for alpha={alpha}, N={n}")


class FormatError(TrojanForgeError):
    """Malformed IDX file."""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f"{path} " if path else ""
        super().__init__(f"{where}at byte offset {offset}: {message}")


class NumericError(TrojanForgeError):
    """Loss or parameters became NaN/Inf during training."""

    def __init__(self, stage: str, index: int, detail: str = ""):
        self.stage = stage
        self.index = index
        suffix = f" ({detail})" if detail else ""
        super().__init__(f"non-finite value during {stage} at index {index}{suffix}")


class ConfigError(TrojanForgeError):
    """Unknown key, malformed value or out-of-range value in a config file."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")
