"""
Test suite for Prometheus metrics collection.
"""

from pathlib import Path

import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.metrics import PROMETHEUS_AVAILABLE, MetricsCollector


pytestmark = pytest.mark.skipif(not PROMETHEUS_AVAILABLE, reason="prometheus_client not installed")


class TestMetricsCollector:
    """Test cases for the metrics collector."""

    def test_disabled(self):
        """A disabled collector records nothing and says so."""
        collector = MetricsCollector(enabled=False)
        collector.record_trial("BbpDense", "ok", 0.1)

        assert collector.get_metrics() == "# Metrics disabled\n"
        assert collector.write_textfile("unused.prom") is None

    def test_trial_counters(self):
        """Trials are counted by kind and status."""
        collector = MetricsCollector(enabled=True)
        collector.record_trial("CltHistogram", "ok", 0.2)
        collector.record_trial("CltHistogram", "ok", 0.3)
        collector.record_trial("CltHistogram", "excluded", 0.0)
        text = collector.get_metrics()

        assert 'sbm_spectra_trials_total{kind="CltHistogram",status="ok"} 2.0' in text
        assert 'sbm_spectra_trials_total{kind="CltHistogram",status="excluded"} 1.0' in text
        assert 'sbm_spectra_trial_duration_seconds_count{kind="CltHistogram"} 2.0' in text

    def test_experiment_verdicts(self):
        """Experiments are counted by verdict."""
        collector = MetricsCollector(enabled=True)
        collector.record_experiment("ErrorCurve", "pass")

        assert 'sbm_spectra_experiments_total{kind="ErrorCurve",verdict="pass"} 1.0' in collector.get_metrics()

    def test_app_info(self):
        """The registry carries version information."""
        text = MetricsCollector(enabled=True).get_metrics()

        assert "sbm_spectra_info" in text

    def test_textfile(self, tmp_path):
        """The registry can be dumped as a Prometheus textfile."""
        collector = MetricsCollector(enabled=True)
        collector.record_pool_width(4)
        path = collector.write_textfile(str(tmp_path / "metrics" / "sbm.prom"))

        assert path is not None
        assert "sbm_spectra_pool_width 4.0" in path.read_text()

    def test_no_textfile_without_path(self, mocker):
        """Nothing is written when no path is configured."""
        mocker.patch("src.metrics.config.METRICS_FILE", "")

        assert MetricsCollector(enabled=True).write_textfile() is None
