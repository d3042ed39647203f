"""Shared test wiring."""

import pytest
import structlog


@pytest.fixture(autouse=True)
def _reset_structlog():
    """Undo logging configured by a test (e.g. cli.main binding a captured stderr)."""
    yield
    structlog.reset_defaults()
