"""
Prometheus metrics collection for sbm-spectra.

Trial and experiment counters for the Monte Carlo harness. Metrics live in
their own registry and are written as a Prometheus textfile after harness
runs; they never enter experiment reports.
"""

from pathlib import Path
from typing import Any, Optional

try:
    from prometheus_client import (
        CollectorRegistry,
        Counter,
        Gauge,
        Histogram,
        Info,
        generate_latest,
        write_to_textfile,
    )
    PROMETHEUS_AVAILABLE = True
except ImportError:
    PROMETHEUS_AVAILABLE = False
    CollectorRegistry = None

import structlog

from .config import config

logger = structlog.get_logger()


class MetricsCollector:
    """Collects Prometheus metrics for trials and experiments."""

    def __init__(self, registry: Optional[Any] = None, enabled: Optional[bool] = None):
        if enabled is None:
            enabled = config.METRICS_ENABLED
        self.enabled = PROMETHEUS_AVAILABLE and enabled

        if not self.enabled:
            self.registry = None
            logger.debug(
                "Prometheus metrics disabled",
                prometheus_available=PROMETHEUS_AVAILABLE,
                metrics_enabled=enabled,
            )
            return

        self.registry = registry or CollectorRegistry()

        self.app_info = Info(
            "sbm_spectra",
            "Application information",
            registry=self.registry,
        )
        self.app_info.info({"version": config.APP_VERSION, "schema": str(config.SCHEMA_VERSION)})

        self.trials_total = Counter(
            "sbm_spectra_trials_total",
            "Monte Carlo trials by outcome",
            ["kind", "status"],
            registry=self.registry,
        )

        self.trial_duration = Histogram(
            "sbm_spectra_trial_duration_seconds",
            "Wall time per trial",
            ["kind"],
            buckets=[0.01, 0.05, 0.1, 0.5, 1, 2, 5, 10, 30, 60],
            registry=self.registry,
        )

        self.experiments_total = Counter(
            "sbm_spectra_experiments_total",
            "Completed experiments by verdict",
            ["kind", "verdict"],
            registry=self.registry,
        )

        self.pool_width = Gauge(
            "sbm_spectra_pool_width",
            "Worker threads used by the last experiment",
            registry=self.registry,
        )

    def record_trial(self, kind: str, status: str, duration: float) -> None:
        if not self.enabled:
            return
        self.trials_total.labels(kind=kind, status=status).inc()
        if status == "ok":
            self.trial_duration.labels(kind=kind).observe(duration)

    def record_experiment(self, kind: str, verdict: str) -> None:
        if not self.enabled:
            return
        self.experiments_total.labels(kind=kind, verdict=verdict).inc()

    def record_pool_width(self, width: int) -> None:
        if not self.enabled:
            return
        self.pool_width.set(width)

    def get_metrics(self) -> str:
        """Metrics in Prometheus text format."""
        if not self.enabled:
            return "# Metrics disabled\n"
        return generate_latest(self.registry).decode("utf-8")

    def write_textfile(self, path: Optional[str] = None) -> Optional[Path]:
        """Dump the registry to METRICS_FILE (or ``path``) if configured."""
        path = path or config.METRICS_FILE
        if not self.enabled or not path:
            return None
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(target), self.registry)
        logger.info("Metrics written", path=str(target))
        return target


# Global metrics collector instance
metrics = MetricsCollector()
