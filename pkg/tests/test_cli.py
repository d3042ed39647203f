"""
Test suite for the sbm-spectra command-line interface.
"""

import json
from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src import detect
from src.cli import build_parser, main
from src.config import Config
from src.formats import read_matrix
from src.model import SbmParams


@pytest.fixture
def matrix_file(tmp_path):
    """A rescaled two-community sample written in SBMM format."""
    path = tmp_path / "m.sbmm"
    code = main([
        "sample", "--seed", "4", "--n", "60", "--k", "2",
        "--p-a", "0.2", "--gamma", "0.5", "--out", str(path),
    ])
    assert code == 0
    return path


@pytest.fixture
def bbp_config_file(tmp_path):
    """A tiny BBP experiment config."""
    path = tmp_path / "bbp.json"
    path.write_text(json.dumps({
        "kind": "BbpDense",
        "base_seed": 1,
        "trials": 4,
        "model": {"n": 100, "k": 2, "p_a": 0.2},
        "grid": [3.0],
    }))
    return path


class TestSample:
    """Test cases for the sample subcommand."""

    def test_writes_matrix(self, matrix_file):
        """Samples are written as readable SBMM matrices."""
        assert read_matrix(matrix_file).n == 60

    def test_reproducible(self, tmp_path, matrix_file):
        """The same seed gives the same bytes."""
        again = tmp_path / "again.sbmm"
        main([
            "sample", "--seed", "4", "--n", "60", "--k", "2",
            "--p-a", "0.2", "--gamma", "0.5", "--out", str(again),
        ])

        assert again.read_bytes() == matrix_file.read_bytes()

    def test_deformed_csv(self, tmp_path):
        """cgSBM samples accept deformation strengths and CSV output."""
        path = tmp_path / "h.csv"
        code = main([
            "sample", "--seed", "1", "--n", "30", "--k", "1", "--p-s", "0.2", "--p-d", "0.2",
            "--matrix", "cgsbm", "--d", "3.0", "--format", "csv", "--out", str(path),
        ])

        assert code == 0
        assert len(path.read_text().splitlines()) == 30

    def test_seed_required(self):
        """Sampling without a seed is a usage error."""
        with pytest.raises(SystemExit) as info:
            main(["sample", "--n", "60", "--k", "2", "--p-a", "0.2", "--gamma", "0.5"])

        assert info.value.code == 1

    def test_missing_params(self, capsys):
        """Incomplete parameters exit with a usage error report."""
        code = main(["sample", "--seed", "1", "--n", "60"])

        assert code == 1
        assert "ConfigError" in capsys.readouterr().err

    def test_invalid_params(self, capsys):
        """Model errors exit with status 2."""
        code = main(["sample", "--seed", "1", "--n", "61", "--k", "2", "--p-s", "0.2", "--p-d", "0.1"])

        assert code == 2
        assert "NotBalanced" in capsys.readouterr().err

    def test_sigma_hat_rescaling(self, tmp_path):
        """--sigma-hat divides by sqrt(N p_a (1 - p_a)) instead of sigma."""
        path = tmp_path / "hat.sbmm"
        code = main([
            "sample", "--seed", "2", "--n", "60", "--k", "2", "--p-s", "0.2", "--p-d", "0.1",
            "--sigma-hat", "--out", str(path),
        ])
        params = SbmParams.create(60, 2, 0.2, 0.1)
        values = set(np.unique(read_matrix(path).values))

        assert code == 0
        assert values <= {(1.0 - params.p_a) / params.sigma_hat, -params.p_a / params.sigma_hat}
        assert params.sigma_hat != params.sigma


class TestAnalysis:
    """Test cases for spectrum, lss-test, estimate-k, tau and predict."""

    def test_spectrum_json(self, matrix_file, capsys):
        """The spectrum is printed descending."""
        code = main(["spectrum", "--matrix", str(matrix_file), "--json"])
        payload = json.loads(capsys.readouterr().out)

        assert code == 0
        assert payload["v"] == 1
        assert len(payload["eigenvalues"]) == 60
        assert payload["eigenvalues"] == sorted(payload["eigenvalues"], reverse=True)

    def test_spectrum_csv(self, matrix_file, capsys):
        """CSV output has one eigenvalue per line."""
        main(["spectrum", "--matrix", str(matrix_file)])

        assert len(capsys.readouterr().out.splitlines()) == 60

    def test_lss_test(self, matrix_file, capsys):
        """The test prints its decision."""
        code = main([
            "lss-test", "--matrix", str(matrix_file),
            "--k1", "0", "--k2", "1", "--gamma", "0.5", "--p", "0.2", "--json",
        ])
        payload = json.loads(capsys.readouterr().out)

        assert code == 0
        assert payload["decision"] in ("AcceptH1", "RejectH1")
        assert payload["m_c"] == pytest.approx(
            detect.critical_value(detect.TestConfig(k1=0, k2=1, gamma=0.5, p=0.2))
        )

    def test_lss_test_bad_hypotheses(self, matrix_file, capsys):
        """k2 <= k1 is refused before any computation."""
        code = main([
            "lss-test", "--matrix", str(matrix_file),
            "--k1", "2", "--k2", "1", "--gamma", "0.5", "--p", "0.2",
        ])

        assert code == 2
        assert "InvalidK" in capsys.readouterr().err

    def test_estimate_k(self, matrix_file, capsys):
        """estimate-k prints kappa' and k_hat."""
        code = main(["estimate-k", "--matrix", str(matrix_file), "--gamma", "0.5", "--p", "0.2"])
        out = capsys.readouterr().out

        assert code == 0
        assert "kappa_prime" in out and "k_hat" in out

    def test_tau_single(self, capsys):
        """tau --ell prints one coefficient."""
        code = main(["tau", "--f", "x4", "--ell", "4"])

        assert code == 0
        assert float(capsys.readouterr().out) == pytest.approx(1.0)

    def test_tau_table(self, capsys):
        """tau --L prints a coefficient table."""
        main(["tau", "--f", "x2", "--L", "3"])
        lines = capsys.readouterr().out.splitlines()

        assert lines[0] == "ell,tau"
        assert len(lines) == 5

    def test_unknown_function(self, capsys):
        """Unknown registry keys are usage errors."""
        code = main(["tau", "--f", "sinh", "--ell", "1"])
        err = capsys.readouterr().err

        assert code == 1
        assert "UnknownFunction" in err
        assert "usage:" in err

    def test_predict_closed_form(self, capsys):
        """Without --f, predict prints the closed-form moments."""
        main(["predict", "--k", "2", "--gamma", "0.5", "--p", "0.1", "--json"])
        payload = json.loads(capsys.readouterr().out)

        assert payload["mean"] == pytest.approx(detect.closed_form_moments(2, 0.5, 0.1).mean)

    def test_predict_sparse(self, capsys):
        """With --n, predict prints sparse-regime location and scale."""
        code = main(["predict", "--n", "1000", "--p", "0.02", "--f", "x4", "--json"])
        payload = json.loads(capsys.readouterr().out)

        assert code == 0
        assert payload["tau4"] == pytest.approx(1.0)


class TestExperiments:
    """Test cases for the Monte Carlo subcommands."""

    def test_mc_bbp_writes_report(self, bbp_config_file, tmp_path):
        """The report stem gets JSON and CSV files."""
        out = tmp_path / "reports" / "bbp"
        code = main([
            "mc-bbp", "--config", str(bbp_config_file), "--trials", "2", "--threads", "1", "--out", str(out),
        ])
        payload = json.loads((tmp_path / "reports" / "bbp.json").read_text())

        assert code == 0
        assert payload["trials"]["planned"] == 2
        assert (tmp_path / "reports" / "bbp.csv").exists()

    def test_seed_override(self, bbp_config_file, capsys):
        """--seed replaces base_seed."""
        main(["mc-bbp", "--config", str(bbp_config_file), "--trials", "1", "--seed", "42", "--threads", "1"])
        payload = json.loads(capsys.readouterr().out)

        assert payload["config"]["base_seed"] == 42
        assert payload["per_trial"][0]["seed"] == 42

    def test_kind_mismatch(self, bbp_config_file, capsys):
        """A config for another experiment is a usage error."""
        code = main(["mc-clt", "--config", str(bbp_config_file)])

        assert code == 1
        assert "ConfigError" in capsys.readouterr().err

    def test_config_required(self, capsys):
        """Experiments need a config."""
        assert main(["mc-error"]) == 1

    def test_local_law_single_matrix(self, tmp_path, capsys):
        """diag-locallaw probes a single matrix."""
        path = tmp_path / "h.sbmm"
        main([
            "sample", "--seed", "2", "--n", "60", "--k", "2", "--p-a", "0.2", "--gamma", "0.5",
            "--matrix", "cgsbm", "--out", str(path),
        ])
        capsys.readouterr()
        code = main(["diag-locallaw", "--matrix", str(path), "--z-re", "3.0"])
        payload = json.loads(capsys.readouterr().out)

        assert code == 0
        assert payload["z_re"] == 3.0
        assert payload["m_re"] < 0.0

    def test_missing_matrix_file(self, tmp_path, capsys):
        """Unreadable inputs exit with status 2."""
        code = main(["spectrum", "--matrix", str(tmp_path / "nope.sbmm")])

        assert code == 2


class TestParser:
    """Test cases for the argument parser and startup checks."""

    def test_invalid_settings(self, mocker, capsys):
        """Out-of-range settings are reported before any work."""
        mocker.patch.object(Config, "MEMORY_FRACTION", 0.0)

        code = main(["tau", "--f", "x2", "--ell", "2"])

        assert code == 1
        assert "Memory fraction" in capsys.readouterr().err

    def test_subcommands(self):
        """Every documented subcommand is registered."""
        parser = build_parser()
        args = parser.parse_args(["predict", "--p", "0.1"])

        assert args.command == "predict"
        assert args.k == 0 and args.gamma == 0.0

    def test_program_name(self):
        """The parser is named after the application."""
        assert build_parser().prog == Config.APP_NAME
