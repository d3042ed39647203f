"""
Test suite for the named test-function registry.
"""

import math
from pathlib import Path

import numpy as np
import pytest

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src import detect
from src.errors import UnknownFunction
from src.function_registry import available, resolve


class TestResolve:
    """Test cases for registry lookups."""

    @pytest.mark.parametrize("key, x, expected", [
        ("x", 1.5, 1.5),
        ("x2", -3.0, 9.0),
        ("x4", 2.0, 16.0),
    ])
    def test_monomials(self, key, x, expected):
        """Monomials evaluate pointwise."""
        assert float(resolve(key)(np.array(x))) == pytest.approx(expected)

    def test_logdet(self):
        """logdet:<gamma> is log(1 + gamma^2 - gamma x)."""
        f = resolve("logdet:0.5")

        assert float(f(np.array(1.0))) == pytest.approx(math.log(0.75))

    def test_phi(self):
        """phi:<gamma>:<p> is the detection function."""
        f = resolve("phi:0.5:0.1")
        x = np.linspace(-2.0, 2.0, 7)

        assert np.allclose(f(x), detect.phi_gamma(x, 0.5, 0.1))

    def test_cheb(self):
        """cheb:<l> is T_l(x/2)."""
        f = resolve("cheb:3")

        assert float(f(np.array(1.0))) == pytest.approx(-1.0)
        assert float(f(np.array(2.0))) == pytest.approx(1.0)

    def test_vectorized(self):
        """Registry functions accept arrays."""
        values = resolve("x2")(np.array([1.0, 2.0, 3.0]))

        assert values.tolist() == [1.0, 4.0, 9.0]

    def test_key_and_description(self):
        """Resolved functions remember their key."""
        f = resolve("cheb:5")

        assert f.key == "cheb:5"
        assert "T_5" in f.description

    @pytest.mark.parametrize("key", ["sin", "cheb:-1", "cheb:two", "logdet:abc", "phi:0.5", ""])
    def test_unknown(self, key):
        """Unknown or malformed keys raise UnknownFunction."""
        with pytest.raises(UnknownFunction):
            resolve(key)

    def test_available(self):
        """The listing names every family."""
        names = available()

        assert {"x", "x2", "x4"} <= set(names)
        assert "phi:<gamma>:<p>" in names
