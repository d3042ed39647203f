"""
Test suite for Chebyshev coefficients and the CLT mean/variance functionals.
"""

import math
from pathlib import Path

import numpy as np
import pytest
from structlog.testing import capture_logs

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from src import detect
from src.chebstats import (
    cheb_T,
    cheb_coeffs,
    clt_mean_variance,
    k4,
    k4_plus_2,
    sparse_prediction,
    tau,
)
from src.errors import GammaOutOfRange, GridTooCoarse, POutOfRange, SeriesNotConverged, Tau2Zero
from src.function_registry import resolve
from src.model import SbmParams, sparse_params


def square(x):
    return np.asarray(x, dtype=np.float64) ** 2


def quartic(x):
    return np.asarray(x, dtype=np.float64) ** 4


class TestChebyshev:
    """Test cases for Chebyshev polynomials and coefficients."""

    def test_recurrence_matches_cosine(self):
        """T_l(cos t) = cos(l t)."""
        t = np.linspace(0.0, math.pi, 11)

        for ell in range(6):
            assert np.allclose(cheb_T(ell, np.cos(t)), np.cos(ell * t))

    def test_scalar_input(self):
        """Scalars in, floats out."""
        assert cheb_T(3, 0.5) == pytest.approx(-1.0)
        assert cheb_T(0, 0.3) == 1.0

    def test_monomial_coefficients(self):
        """x^2 = 2 + 2 T_2(x/2) and x^4 = 6 + 8 T_2(x/2) + 2 T_4(x/2)."""
        assert tau(square, 0) == pytest.approx(2.0)
        assert tau(square, 2) == pytest.approx(1.0)
        assert tau(quartic, 0) == pytest.approx(6.0)
        assert tau(quartic, 2) == pytest.approx(4.0)
        assert tau(quartic, 4) == pytest.approx(1.0)
        assert abs(tau(quartic, 3)) < 1e-12

    def test_identity_coefficient(self):
        """x = 2 T_1(x/2), so tau_1 = 1."""
        assert tau(lambda x: x, 1) == pytest.approx(1.0)

    def test_batch_matches_single(self):
        """The DCT path agrees with direct quadrature."""
        f = resolve("logdet:0.4")
        coeffs = cheb_coeffs(f, 8)

        assert coeffs.L == 8
        for ell in range(9):
            assert coeffs[ell] == pytest.approx(tau(f, ell), abs=1e-12)

    def test_coefficients_beyond_L_are_zero(self):
        """Indexing past L returns zero."""
        coeffs = cheb_coeffs(quartic, 4)

        assert coeffs[10] == 0.0
        assert coeffs.rows()[4] == (4, pytest.approx(1.0))

    def test_tail_bound_small_for_polynomials(self):
        """A degree-4 polynomial has no coefficients past 4."""
        assert cheb_coeffs(quartic, 4).tail_bound < 1e-12

    def test_phi_gamma_coefficients(self):
        """tau_l(phi_gamma) = gamma^l / l for l >= 3."""
        gamma = 0.6
        f = resolve(f"phi:{gamma}:0.1")

        for ell in range(3, 9):
            assert tau(f, ell) == pytest.approx(gamma**ell / ell, rel=1e-9)
        assert tau(f, 1) == pytest.approx(2.0 * gamma, rel=1e-9)

    def test_grid_too_coarse(self):
        """The grid must resolve cos(l t)."""
        with pytest.raises(GridTooCoarse):
            tau(square, 10, grid_n=40)
        with pytest.raises(GridTooCoarse):
            cheb_coeffs(square, 10, grid_n=40)

    @pytest.mark.parametrize("ell", range(1, 11))
    def test_scaled_chebyshev_coefficient(self, ell):
        """T_l(x/2) has tau_l = 1/2 and no other coefficient."""
        f = lambda x: cheb_T(ell, np.asarray(x, dtype=np.float64) / 2.0)

        assert tau(f, ell) == pytest.approx(0.5, abs=1e-10)
        for other in range(ell + 3):
            if other != ell:
                assert abs(tau(f, other)) < 1e-10

    def test_linear_in_f(self):
        """tau_l(a f + b g) = a tau_l(f) + b tau_l(g)."""
        f = resolve("logdet:0.4")
        combined = lambda x: 2.5 * f(x) - 0.75 * quartic(x)

        for ell in range(7):
            expected = 2.5 * tau(f, ell) - 0.75 * tau(quartic, ell)
            assert tau(combined, ell) == pytest.approx(expected, abs=1e-10)

    def test_stable_under_grid_doubling(self):
        """An analytic f has the same coefficients on a twice finer grid."""
        f = resolve("logdet:0.4")

        for ell in range(9):
            assert tau(f, ell, grid_n=512) == pytest.approx(tau(f, ell, grid_n=1024), abs=1e-10)


class TestKurtosis:
    """Test cases for the fourth-cumulant parameter."""

    @pytest.mark.parametrize("p", [0.01, 0.1, 0.3, 0.7, 0.95])
    def test_factored_form(self, p):
        """k4 + 2 = (1 - 2p)^2 / (p (1 - p))."""
        assert k4_plus_2(p) == pytest.approx(k4(p) + 2.0, rel=1e-12)

    def test_bernoulli_cumulant(self):
        """k4 equals the normalized Bernoulli fourth cumulant plus a centering term."""
        p = 0.2
        expected = (1.0 - 7.0 * p + 12.0 * p**2 - 6.0 * p**3) / (p * (1.0 - p) ** 2)

        assert k4(p) == pytest.approx(expected)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_out_of_range(self, p):
        """p must lie strictly inside (0, 1)."""
        with pytest.raises(POutOfRange):
            k4(p)


class TestCltMeanVariance:
    """Test cases for the dense-regime mean and variance functionals."""

    @pytest.mark.parametrize("K", [0, 1, 3])
    @pytest.mark.parametrize("gamma", [0.3, 0.5, 0.8])
    def test_phi_gamma_matches_closed_form(self, K, gamma):
        """The generic series reproduces the closed-form m_K and V_0."""
        p = 0.1
        generic = clt_mean_variance(resolve(f"phi:{gamma}:{p}"), K, gamma, p)
        closed = detect.closed_form_moments(K, gamma, p)

        assert generic.mean == pytest.approx(closed.mean, rel=1e-8, abs=1e-10)
        assert generic.variance == pytest.approx(closed.variance, rel=1e-8)

    def test_square_without_spikes(self):
        """For f = x^2 and gamma = 0 the mean vanishes and V_0 = 2 k4 + 4."""
        p = 0.2
        prediction = clt_mean_variance(square, 0, 0.0, p)

        assert prediction.mean == pytest.approx(0.0, abs=1e-10)
        assert prediction.variance == pytest.approx(2.0 * k4(p) + 4.0, rel=1e-10)

    def test_spikes_shift_mean(self):
        """Each spike adds sum_l gamma^l tau_l to the mean."""
        p, gamma = 0.2, 0.5
        base = clt_mean_variance(quartic, 0, gamma, p)
        shifted = clt_mean_variance(quartic, 2, gamma, p)
        per_spike = gamma**2 * 4.0 + gamma**4 * 1.0

        assert shifted.mean - base.mean == pytest.approx(2 * per_spike, rel=1e-9)
        assert shifted.variance == pytest.approx(base.variance)

    @pytest.mark.parametrize("p", [0.05, 0.1, 0.3])
    @pytest.mark.parametrize("gamma_squared", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    def test_closed_form_over_grid(self, gamma_squared, p):
        """The series and the closed forms agree for K = 0..4 over the detection grid."""
        gamma = math.sqrt(gamma_squared)
        f = resolve(f"phi:{gamma}:{p}")

        for K in range(5):
            generic = clt_mean_variance(f, K, gamma, p)
            closed = detect.closed_form_moments(K, gamma, p)
            assert generic.mean == pytest.approx(closed.mean, abs=1e-6)
            assert generic.variance == pytest.approx(closed.variance, abs=1e-6)

    def test_truncation_reported(self):
        """Analytic inputs stop early with a small tail bound."""
        prediction = clt_mean_variance(resolve("phi:0.5:0.1"), 1, 0.5, 0.1)

        assert prediction.L < 200
        assert prediction.tail_bound < 1e-6
        assert prediction.sd == pytest.approx(math.sqrt(prediction.variance))

    def test_gamma_out_of_range(self):
        """gamma must lie in [0, 1)."""
        with pytest.raises(GammaOutOfRange):
            clt_mean_variance(square, 0, 1.0, 0.2)

    def test_series_not_converged(self):
        """Growing increments at L_max are refused."""
        with pytest.raises(SeriesNotConverged):
            clt_mean_variance(resolve("cheb:3"), 0, 0.5, 0.1, L_max=3)


class TestSparsePrediction:
    """Test cases for sparse-regime location and scale."""

    def test_quartic(self):
        """Location uses xi^4 tau_4 and scale uses |tau_2|."""
        params = sparse_params(4000, 1, 0.35, 0.0)
        prediction = sparse_prediction(quartic, params, force_xi4_one=True)
        root_n, q = math.sqrt(4000), params.q

        assert prediction.xi4 == 1.0
        assert prediction.mean_shift == pytest.approx(root_n / q, rel=1e-9)
        assert prediction.scale == pytest.approx(math.sqrt(8000) / q * 4.0, rel=1e-9)
        assert prediction.mean_shift_alt == pytest.approx((q / root_n) * (q * q / 4000), rel=1e-9)

    def test_tau2_zero(self):
        """Odd test functions have no sparse CLT scale."""
        with pytest.raises(Tau2Zero):
            sparse_prediction(lambda x: x, sparse_params(4000, 1, 0.35, 0.0))

    def test_location_without_scale(self):
        """T_4(x/2) has tau_2 = 0 but a well-defined mean shift."""
        params = sparse_params(4000, 1, 0.35, 0.0)

        with pytest.raises(Tau2Zero):
            sparse_prediction(resolve("cheb:4"), params)
        prediction = sparse_prediction(
            resolve("cheb:4"), params, force_xi4_one=True, require_scale=False
        )

        assert prediction.tau4 == pytest.approx(0.5, abs=1e-10)
        assert prediction.scale == pytest.approx(0.0, abs=1e-9)
        assert prediction.mean_shift == pytest.approx(0.5 * math.sqrt(4000) / params.q, rel=1e-9)

    def test_dense_params_warn(self):
        """p_a above the sparse threshold is logged."""
        with capture_logs() as logs:
            sparse_prediction(square, SbmParams.create(1000, 1, 0.1, 0.1))

        assert any(
            entry["event"] == "Sparse prediction outside sparse regime" for entry in logs
        )

    def test_to_dict(self):
        """Both shift candidates are serialized."""
        record = sparse_prediction(quartic, sparse_params(4000, 1, 0.35, 0.0)).to_dict()

        assert {"mean_shift", "mean_shift_alt", "scale", "tau2", "tau4", "xi4", "q"} <= set(record)
