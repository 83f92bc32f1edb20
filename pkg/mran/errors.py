"""
Exception hierarchy shared by every mran module.
"""
from typing import Optional


class MranError(Exception):
    """Root of all errors raised by mran"""


class DimensionError(MranError, ValueError):
    """Tensor shapes do not agree for an operation"""


class ConfigError(MranError, ValueError):
    """Invalid configuration value or hyperparameter"""


class ValidationError(MranError, ValueError):
    """Input data violates a documented precondition"""


class UsageError(MranError):
    """API used outside its contract (wrong call order, missing inputs)"""


class ParseError(MranError, ValueError):
    """Malformed line in a review file"""

    def __init__(self, message: str, line_number: Optional[int] = None, pair: Optional[str] = None):
        self.line_number = line_number
        self.pair = pair
        location = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{location}{message}")


class GradientCheckError(MranError):
    """Analytic and numeric gradients disagree beyond the tolerance"""

    def __init__(self, term: str, error: float, tolerance: float):
        self.term = term
        self.error = error
        self.tolerance = tolerance
        super().__init__(f"gradient check failed for term '{term}': max relative error {error:.3e} > {tolerance:.0e}")


class TermIsolationError(MranError):
    """A loss term with zero weight contributed to a training step"""
