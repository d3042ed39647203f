"""
Error taxonomy for sbm-spectra.

Every failure a caller can act on is a typed ``SbmSpectraError`` carrying a
category and the offending values. The CLI turns them into structured
reports and exit codes via ``build_error_report`` and ``exit_code_for``.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import structlog


logger = structlog.get_logger()


class ErrorCategory(Enum):
    """Error categories for reporting and exit codes."""
    VALIDATION = "validation"
    NUMERICAL = "numerical"
    USAGE = "usage"
    IO = "io"


class SbmSpectraError(Exception):
    """Base class for all domain errors."""

    category: ErrorCategory = ErrorCategory.NUMERICAL

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    @property
    def name(self) -> str:
        return type(self).__name__


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------

class NotBalanced(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class ProbabilityOutOfRange(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class DegenerateVariance(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class NoFeasibleSolution(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class DimensionMismatch(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class InvalidK(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class NotAdjacency(SbmSpectraError):
    category = ErrorCategory.VALIDATION


# ----------------------------------------------------------------------------
# spectral
# ----------------------------------------------------------------------------

class ConvergenceFailure(SbmSpectraError):
    pass


class DomainError(SbmSpectraError):
    pass


class BranchCut(SbmSpectraError):
    pass


class SingularShift(SbmSpectraError):
    pass


# ----------------------------------------------------------------------------
# chebstats
# ----------------------------------------------------------------------------

class GridTooCoarse(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class POutOfRange(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class GammaOutOfRange(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class SeriesNotConverged(SbmSpectraError):
    pass


class Tau2Zero(SbmSpectraError):
    pass


# ----------------------------------------------------------------------------
# detect
# ----------------------------------------------------------------------------

class LogDomain(SbmSpectraError):
    pass


class KurtosisSingularity(SbmSpectraError):
    category = ErrorCategory.VALIDATION


class DegenerateSpectrum(SbmSpectraError):
    pass


class StrongSignal(DegenerateSpectrum):
    """Outlier eigenvalue past the log singularity; PCA applies instead."""


# ----------------------------------------------------------------------------
# plumbing
# ----------------------------------------------------------------------------

class UnknownFunction(SbmSpectraError):
    category = ErrorCategory.USAGE


class ConfigError(SbmSpectraError):
    category = ErrorCategory.USAGE


class MatrixFormatError(SbmSpectraError):
    category = ErrorCategory.IO


@dataclass
class ErrorReport:
    """Structured error record printed by the CLI."""
    error: str
    category: str
    message: str
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def build_error_report(error: Exception) -> ErrorReport:
    """Turn any exception into a structured error report."""
    if isinstance(error, SbmSpectraError):
        details = {key: _plain(value) for key, value in error.details.items()}
        report = ErrorReport(
            error=error.name,
            category=error.category.value,
            message=error.message,
            details=details,
        )
    else:
        report = ErrorReport(
            error=type(error).__name__,
            category=ErrorCategory.NUMERICAL.value,
            message=str(error),
        )

    logger.debug("Error report built", error=report.error, category=report.category)
    return report


def exit_code_for(error: Optional[Exception]) -> int:
    """Exit code contract: 0 success, 1 usage error, 2 numerical/model error."""
    if error is None:
        return 0
    if isinstance(error, SbmSpectraError) and error.category == ErrorCategory.USAGE:
        return 1
    return 2


def _plain(value: Any) -> Any:
    """Convert numpy scalars and tuples to JSON-friendly values."""
    if hasattr(value, "tolist") and callable(value.tolist):
        value = value.tolist()
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value
