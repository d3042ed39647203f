"""
Configuration management for sbm-spectra.

This module centralizes all configuration settings for the sampling,
spectral and Monte Carlo layers, supporting both environment variables
(optionally loaded from a ``.env`` file) and defaults.
"""

import logging
import os
import sys
from pathlib import Path

import psutil
import structlog
from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Central configuration class for sbm-spectra."""

    # ========================================================================
    # Core Application Settings
    # ========================================================================

    APP_NAME: str = "sbm-spectra"
    APP_VERSION: str = "1.0.0"

    # Schema version stamped on every JSON artifact
    SCHEMA_VERSION: int = 1

    # ========================================================================
    # File System Paths
    # ========================================================================

    BASE_DIR: Path = Path(__file__).parent.parent
    ASSETS_DIR: Path = BASE_DIR / "assets"
    EXPERIMENTS_DIR: Path = ASSETS_DIR / "experiments"

    # ========================================================================
    # Worker Pool
    # ========================================================================

    THREADS: int = int(os.getenv("SBM_SPECTRA_THREADS", str(psutil.cpu_count() or 1)))
    MEMORY_FRACTION: float = float(os.getenv("SBM_SPECTRA_MEMORY_FRACTION", "0.5"))
    # Dense N x N float64 buffers alive per trial (adjacency, uniforms, M, workspace)
    ARRAYS_PER_TRIAL: int = 4

    # ========================================================================
    # Numerical Defaults
    # ========================================================================

    SEMICIRCLE_GRID: int = 2048
    TAU_GRID: int = 4096
    SERIES_L_MAX: int = 200
    SERIES_TOL: float = 1e-12
    SERIES_PATIENCE: int = 5  # consecutive small increments before truncating
    KURTOSIS_GUARD: float = 1e-6  # refuse |1 - 2p| below this
    SOLVE_MAX_ITER: int = 200
    SOLVE_TOL: float = 1e-12
    SINGULAR_SHIFT_TOL: float = 1e-12
    SPARSE_WARN_P_A: float = 0.05

    # ========================================================================
    # Experiment Defaults
    # ========================================================================

    DEFAULT_TRIALS: int = 2000
    HIST_BINS: int = 64
    HIST_HALF_WIDTH_SD: float = 5.0
    LOCAL_LAW_CONSTANT: float = 10.0
    OUTLIER_THRESHOLD: float = 2.05

    # ========================================================================
    # Logging Configuration
    # ========================================================================

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv("LOG_FORMAT", "json")

    # ========================================================================
    # Monitoring and Metrics Configuration
    # ========================================================================

    METRICS_ENABLED: bool = _env_bool("METRICS_ENABLED", "true")
    METRICS_FILE: str = os.getenv("SBM_SPECTRA_METRICS_FILE", "")

    # ========================================================================
    # Test Suite
    # ========================================================================

    RUN_ACCEPTANCE: bool = _env_bool("SBM_SPECTRA_ACCEPTANCE", "false")

    @classmethod
    def validate_config(cls) -> bool:
        """Validate configuration values."""
        if cls.THREADS < 1:
            raise ValueError(f"SBM_SPECTRA_THREADS must be >= 1, got {cls.THREADS}")
        if not 0.0 < cls.MEMORY_FRACTION <= 1.0:
            raise ValueError(f"Memory fraction out of range: {cls.MEMORY_FRACTION}")
        if cls.LOG_FORMAT not in ("json", "console"):
            raise ValueError(f"Unknown LOG_FORMAT: {cls.LOG_FORMAT}")
        if cls.TAU_GRID < 8 or cls.SEMICIRCLE_GRID < 8:
            raise ValueError("Quadrature grids must have at least 8 points")
        return True

    @classmethod
    def experiment_path(cls, name: str) -> Path:
        """Resolve a bundled experiment config by file name."""
        path = cls.EXPERIMENTS_DIR / name
        if not path.suffix:
            path = path.with_suffix(".json")
        return path


def configure_logging(level: str = None, fmt: str = None) -> None:
    """Configure structlog to write to stderr, keeping stdout for artifacts."""
    level = (level or Config.LOG_LEVEL).upper()
    fmt = fmt or Config.LOG_FORMAT

    renderer = (
        structlog.processors.JSONRenderer()
        if fmt == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level)
        ),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


# Global configuration instance
config = Config()
