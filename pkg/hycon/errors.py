"""Exception hierarchy shared by every hycon module."""

from typing import Iterable, List


class HyconError(Exception):
    """Base exception class for hycon operations."""
    pass


class ShapeError(HyconError):
    """Exception raised when array shapes do not conform."""
    pass


class LabelError(HyconError):
    """Exception raised for sentiment scores outside [-3, 3] or non-finite."""
    pass


class PairError(HyconError):
    """Exception raised for invalid anchors or pair sets."""
    pass


class DatasetFormatError(HyconError):
    """Exception raised when a feature table cannot be parsed or written."""
    pass


class NumericalError(HyconError):
    """Exception raised for non-finite losses and failed gradient checks."""
    pass


class ConfigError(HyconError):
    """Exception raised for configuration validation failures.

    Attributes:
        violations (List[str]): Every violated constraint, one message each
    """

    def __init__(self, violations: Iterable[str]):
        self.violations: List[str] = list(violations)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.violations))


class OutputError(HyconError):
    """Exception raised when a run directory or result file cannot be written."""
    pass
