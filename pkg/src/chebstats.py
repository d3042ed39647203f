"""
Chebyshev statistics of test functions.

Coefficients tau_l(f) of f in the basis T_l(x/2), computed by the uniform
trapezoid rule in theta = arccos(x/2); the dense-regime CLT mean and variance
functionals built from them; the fourth-cumulant parameter k4; and the
sparse-regime location and scale predictions.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
import scipy.fft
import structlog

from .config import config
from .errors import (
    GammaOutOfRange,
    GridTooCoarse,
    POutOfRange,
    SeriesNotConverged,
    Tau2Zero,
)
from .model import SbmParams
from .spectral import theta_grid, xi4

logger = structlog.get_logger()

TestFunction = Callable[[np.ndarray], np.ndarray]

TAU2_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class ChebCoeffs:
    """tau_0 .. tau_L and an estimate of the discarded tail."""
    taus: Tuple[float, ...]
    tail_bound: float = 0.0

    @property
    def L(self) -> int:
        return len(self.taus) - 1

    def __getitem__(self, ell: int) -> float:
        return self.taus[ell] if ell <= self.L else 0.0

    def rows(self):
        return [(ell, tau) for ell, tau in enumerate(self.taus)]


@dataclass(frozen=True)
class CltPrediction:
    """Limiting Gaussian law of a linear statistic: Normal(mean, variance)."""
    mean: float
    variance: float
    k4: float
    gamma: float
    K: int
    L: int = 0
    tail_bound: float = 0.0

    @property
    def sd(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "k4": self.k4,
            "gamma": self.gamma,
            "K": self.K,
            "L": self.L,
            "tail_bound": self.tail_bound,
        }


@dataclass(frozen=True)
class SparsePrediction:
    """
    Sparse-regime predictions for L_M(f) - N * integral(f dsc).

    ``mean_shift`` is (sqrt(N)/q) xi^4 tau_4(f). ``mean_shift_alt`` is the
    competing (q/sqrt(N)) (q^2/N) tau_4(f) reading, on the same
    (q/sqrt(N))-rescaled axis, kept so experiments can tell them apart.
    """
    q: float
    mean_shift: float
    scale: float
    tau2: float
    tau4: float
    xi4: float
    mean_shift_alt: float = field(default=0.0)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "mean_shift": self.mean_shift,
            "mean_shift_alt": self.mean_shift_alt,
            "scale": self.scale,
            "tau2": self.tau2,
            "tau4": self.tau4,
            "xi4": self.xi4,
        }


# ============================================================================
# Chebyshev coefficients
# ============================================================================


def cheb_T(ell: int, x):
    """T_ell(x) by the three-term recurrence; x may be a scalar or array."""
    previous = np.ones_like(np.asarray(x, dtype=np.float64))
    if ell == 0:
        return previous if np.ndim(x) else float(previous)
    current = np.asarray(x, dtype=np.float64).copy()
    for _ in range(ell - 1):
        previous, current = current, 2.0 * x * current - previous
    return current if np.ndim(x) else float(current)


def _samples(f: TestFunction, grid_n: int) -> np.ndarray:
    theta, _ = theta_grid(grid_n)
    values = np.asarray(f(2.0 * np.cos(theta)), dtype=np.float64)
    return np.broadcast_to(values, theta.shape)


def tau(f: TestFunction, ell: int, grid_n: int = None) -> float:
    """tau_ell(f) = (1/pi) int_0^pi f(2 cos t) cos(ell t) dt."""
    grid_n = grid_n or config.TAU_GRID
    if grid_n < 8 * ell or grid_n < 8:
        raise GridTooCoarse("Quadrature grid too coarse", grid_n=grid_n, ell=ell)
    theta, weights = theta_grid(grid_n)
    samples = _samples(f, grid_n)
    return float(np.dot(weights, samples * np.cos(ell * theta)) / np.pi)


def cheb_coeffs(f: TestFunction, L: int, grid_n: int = None) -> ChebCoeffs:
    """
    tau_0 .. tau_L from one type-I DCT of the trapezoid samples.

    The tail bound sums |tau_l| for L < l <= 2L out of the same transform.
    """
    grid_n = grid_n or config.TAU_GRID
    if grid_n < 8 * L or grid_n < 8:
        raise GridTooCoarse("Quadrature grid too coarse", grid_n=grid_n, ell=L)
    transformed = scipy.fft.dct(_samples(f, grid_n), type=1) / (2.0 * grid_n)
    tail = float(np.sum(np.abs(transformed[L + 1 : 2 * L + 1])))
    return ChebCoeffs(taus=tuple(float(t) for t in transformed[: L + 1]), tail_bound=tail)


# ============================================================================
# Fourth cumulant parameter
# ============================================================================


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise POutOfRange("p must lie in (0, 1)", p=p)


def k4(p: float) -> float:
    """(1 - 7p + 12p^2 - 6p^3) / (p (1-p)^2)."""
    _check_p(p)
    return (1.0 - 7.0 * p + 12.0 * p**2 - 6.0 * p**3) / (p * (1.0 - p) ** 2)


def k4_plus_2(p: float) -> float:
    """k4 + 2 in factored form (1 - 2p)^2 / (p (1-p))."""
    _check_p(p)
    return (1.0 - 2.0 * p) ** 2 / (p * (1.0 - p))


# ============================================================================
# CLT functionals
# ============================================================================


def clt_mean_variance(
    f: TestFunction,
    K: int,
    gamma: float,
    p: float,
    L_max: int = None,
    grid_n: int = None,
) -> CltPrediction:
    """
    Limiting mean m_K(f) and variance V_0(f) of L_M(f) - N int f dsc.

    mean     = (f(2) + f(-2))/4 - tau_0/2 - tau_2 + k4 tau_4 + K sum_l gamma^l tau_l
    variance = -tau_1^2 + 2 k4 tau_2^2 + 2 sum_l l tau_l^2

    Both series stop once SERIES_PATIENCE consecutive increments fall below
    SERIES_TOL, or at L_max.
    """
    if not 0.0 <= gamma < 1.0:
        raise GammaOutOfRange("gamma must lie in [0, 1)", gamma=gamma)
    L_max = L_max or config.SERIES_L_MAX
    kappa = k4(p)
    coeffs = cheb_coeffs(f, L_max, grid_n)

    edges = np.asarray(f(np.array([2.0, -2.0])), dtype=np.float64)
    edges = np.broadcast_to(edges, (2,))
    base_mean = (
        0.25 * (edges[0] + edges[1]) - 0.5 * coeffs[0] - coeffs[2] + kappa * coeffs[4]
    )
    base_variance = -coeffs[1] ** 2 + 2.0 * kappa * coeffs[2] ** 2

    mean_series = 0.0
    variance_series = 0.0
    quiet = 0
    last = L_max
    variance_increments = []
    for ell in range(1, L_max + 1):
        t = coeffs[ell]
        mean_increment = gamma**ell * t
        variance_increment = 2.0 * ell * t * t
        mean_series += mean_increment
        variance_series += variance_increment
        variance_increments.append(variance_increment)
        if abs(mean_increment) < config.SERIES_TOL and abs(variance_increment) < config.SERIES_TOL:
            quiet += 1
            if quiet >= config.SERIES_PATIENCE:
                last = ell
                break
        else:
            quiet = 0
    else:
        # Ran to L_max: accept only if the variance increments are decaying.
        halfway = variance_increments[len(variance_increments) // 2]
        if variance_increments[-1] >= halfway and variance_increments[-1] > config.SERIES_TOL:
            raise SeriesNotConverged(
                "Variance series not decaying", L_max=L_max, last_increment=variance_increments[-1]
            )

    max_tau = max((abs(t) for t in coeffs.taus), default=0.0)
    tail_bound = gamma ** (last + 1) * max_tau / (1.0 - gamma) + coeffs.tail_bound

    return CltPrediction(
        mean=float(base_mean + K * mean_series),
        variance=float(base_variance + variance_series),
        k4=kappa,
        gamma=gamma,
        K=K,
        L=last,
        tail_bound=float(tail_bound),
    )


def sparse_prediction(
    f: TestFunction,
    params: SbmParams,
    force_xi4_one: bool = False,
    grid_n: int = None,
    require_scale: bool = True,
) -> SparsePrediction:
    """
    Location and scale of L_M(f) in the sparse regime q = N^phi.

    The scale needs tau_2(f) != 0; with ``require_scale=False`` only the
    mean-shift candidates are meaningful and ``scale`` may be zero.
    """
    tau2 = tau(f, 2, grid_n)
    if require_scale and abs(tau2) < TAU2_ZERO_TOL:
        raise Tau2Zero("tau_2(f) vanishes; sparse CLT scale undefined", tau2=tau2)
    tau4 = tau(f, 4, grid_n)

    if params.p_a >= config.SPARSE_WARN_P_A:
        logger.warning(
            "Sparse prediction outside sparse regime",
            p_a=params.p_a,
            threshold=config.SPARSE_WARN_P_A,
        )

    n = params.n
    q = params.q
    xi = xi4(params, exact=not force_xi4_one)
    root_n = math.sqrt(n)
    return SparsePrediction(
        q=q,
        mean_shift=(root_n / q) * xi * tau4,
        scale=math.sqrt(2.0 * n) / q * abs(tau2),
        tau2=tau2,
        tau4=tau4,
        xi4=xi,
        mean_shift_alt=(q / root_n) * (q * q / n) * tau4,
    )
