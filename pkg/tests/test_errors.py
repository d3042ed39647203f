"""
Test suite for the error taxonomy, error reports and exit codes.
"""

from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import (
    ConfigError,
    DegenerateSpectrum,
    ErrorCategory,
    MatrixFormatError,
    NotBalanced,
    SbmSpectraError,
    SingularShift,
    StrongSignal,
    UnknownFunction,
    build_error_report,
    exit_code_for,
)


class TestErrors:
    """Test cases for typed errors."""

    def test_details_kept(self):
        """Offending values travel with the error."""
        error = NotBalanced("N must be divisible by K", n=10, k=3)

        assert error.details == {"n": 10, "k": 3}
        assert error.name == "NotBalanced"
        assert error.category == ErrorCategory.VALIDATION
        assert str(error) == "N must be divisible by K"

    def test_strong_signal_is_degenerate_spectrum(self):
        """Callers catching DegenerateSpectrum also see StrongSignal."""
        assert issubclass(StrongSignal, DegenerateSpectrum)
        assert issubclass(DegenerateSpectrum, SbmSpectraError)


class TestReports:
    """Test cases for structured error reports."""

    def test_domain_error_report(self):
        """Reports carry name, category, message and plain details."""
        error = SingularShift("z is an eigenvalue", z=2 + 0j, eigenvalue=np.float64(2.0), shape=(3, 3))
        report = build_error_report(error).to_dict()

        assert report["error"] == "SingularShift"
        assert report["category"] == "numerical"
        assert report["details"]["z"] == {"re": 2.0, "im": 0.0}
        assert report["details"]["eigenvalue"] == 2.0
        assert type(report["details"]["eigenvalue"]) is float
        assert report["details"]["shape"] == [3, 3]

    def test_foreign_error_report(self):
        """Non-domain exceptions are reported by type name."""
        report = build_error_report(ValueError("boom"))

        assert report.error == "ValueError"
        assert report.message == "boom"


class TestExitCodes:
    """Test cases for the exit code contract."""

    @pytest.mark.parametrize("error, code", [
        (None, 0),
        (UnknownFunction("no such f"), 1),
        (ConfigError("bad config"), 1),
        (NotBalanced("unbalanced"), 2),
        (SingularShift("singular"), 2),
        (MatrixFormatError("bad file"), 2),
        (RuntimeError("other"), 2),
    ])
    def test_codes(self, error, code):
        """0 success, 1 usage, 2 everything else."""
        assert exit_code_for(error) == code
