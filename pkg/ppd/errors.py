"""
Exception hierarchy shared by the library and the benchmark CLI.

Every error carries a ``context`` dict so the CLI can emit a
machine-readable record without parsing messages.
"""
from typing import Any, Dict, Optional


class PPDError(Exception):
    """Base class for all library errors."""

    module: str = "ppd"

    def __init__(self, message: str, operation: Optional[str] = None, **context: Any):
        super().__init__(message)
        self.message = message
        self.operation = operation
        self.context: Dict[str, Any] = context

    def to_record(self) -> Dict[str, Any]:
        return {
            'error': type(self).__name__,
            'module': self.module,
            'operation': self.operation,
            'message': self.message,
            'context': {k: _jsonable(v) for k, v in self.context.items()},
        }


class ConfigurationError(PPDError, ValueError):
    """Incompatible dimensions, invalid hyperparameters, bad partitions or levels."""


class DomainError(PPDError, ValueError):
    """Targets outside the support of the likelihood (e.g. negative counts)."""


class UnsupportedError(PPDError, ValueError):
    """A valid request this implementation deliberately does not serve."""


class NumericError(PPDError, ArithmeticError):
    """NaN objectives, failed factorizations, normalization underflow."""


class PredictiveError(PPDError):
    """A predictive grid was rejected (too many failed refits)."""


class IngestionError(PPDError, ValueError):
    """CSV ingestion failure with row/column location."""

    module = "bench"


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    if isinstance(value, float):
        return value if value == value else 'nan'
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)
