"""
Community detection by the optimal linear spectral statistic.

Given a rescaled adjacency matrix and a known signal strength gamma < 1, the
statistic L_gamma is asymptotically Normal(m_K, V_0) where K is the number of
spikes. Two hypotheses K = K1 and K = K2 are separated at the midpoint of
their means; the same statistic also estimates K directly.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import scipy.special
import structlog

from .chebstats import CltPrediction, k4, k4_plus_2
from .config import config
from .errors import (
    DegenerateSpectrum,
    GammaOutOfRange,
    InvalidK,
    KurtosisSingularity,
    LogDomain,
    POutOfRange,
    StrongSignal,
)
from .model import SymMatrix
from .spectral import Spectrum, eigenvalues

logger = structlog.get_logger()


class Decision(Enum):
    ACCEPT_H1 = "AcceptH1"
    REJECT_H1 = "RejectH1"


@dataclass(frozen=True)
class TestConfig:
    """Hypotheses H1: K = k1 versus H2: K = k2 at known gamma and p."""
    __test__ = False

    k1: int
    k2: int
    gamma: float
    p: float

    def __post_init__(self):
        if self.k1 < 0 or self.k2 <= self.k1:
            raise InvalidK("Need 0 <= k1 < k2", k1=self.k1, k2=self.k2)
        if not 0.0 < self.gamma < 1.0:
            raise GammaOutOfRange("gamma must lie in (0, 1)", gamma=self.gamma)
        _check_kurtosis(self.p)


@dataclass(frozen=True)
class RankEstimate:
    statistic: float
    kappa_prime: float
    k_hat: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "kappa_prime": self.kappa_prime,
            "k_hat": self.k_hat,
        }


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    statistic: float
    m_c: float
    decision: Decision
    kappa_prime: float
    k_hat: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "m_c": self.m_c,
            "decision": self.decision.value,
            "kappa_prime": self.kappa_prime,
            "k_hat": self.k_hat,
        }


# ============================================================================
# Test function
# ============================================================================


def _check_kurtosis(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise POutOfRange("p must lie in (0, 1)", p=p)
    if abs(1.0 - 2.0 * p) <= config.KURTOSIS_GUARD:
        raise KurtosisSingularity("k4 + 2 vanishes near p = 1/2", p=p)


def _quadratic_coefficient(gamma: float, p: float) -> float:
    _check_kurtosis(p)
    return gamma * gamma * (1.0 / k4_plus_2(p) - 0.5)


def phi_gamma(x, gamma: float, p: float):
    """log(1 / (1 - gamma x + gamma^2)) + gamma x + gamma^2 (1/(k4+2) - 1/2) x^2."""
    c = _quadratic_coefficient(gamma, p)
    values = np.asarray(x, dtype=np.float64)
    argument = 1.0 - gamma * values + gamma * gamma
    if np.any(argument <= 0.0):
        raise LogDomain(
            "phi_gamma undefined for x >= gamma + 1/gamma",
            x=float(np.max(values)),
            gamma=gamma,
        )
    result = -np.log(argument) + gamma * values + c * values * values
    return result if np.ndim(x) else float(result)


def test_statistic(
    spec: Spectrum, m_trace: float, m_frob2: float, gamma: float, p: float
) -> float:
    """
    L_gamma = -log det((1+gamma^2) I - gamma M) + gamma^2 N/2 + gamma tr M
              + gamma^2 (1/(k4+2) - 1/2) (tr M^2 - N)
    """
    c = _quadratic_coefficient(gamma, p)
    n = spec.n
    argument = (1.0 + gamma * gamma) - gamma * spec.values
    if np.any(argument <= 0.0):
        raise DegenerateSpectrum(
            "Eigenvalue beyond gamma + 1/gamma",
            eigenvalue=float(spec.values[0]),
            limit=gamma + 1.0 / gamma,
        )
    log_det = math.fsum(np.log(argument))
    return -log_det + gamma * gamma * n / 2.0 + gamma * m_trace + c * (m_frob2 - n)


def compute_statistic(
    m: SymMatrix, gamma: float, p: float, spectrum: Optional[Spectrum] = None
) -> float:
    """L_gamma of a rescaled matrix."""
    spectrum = spectrum or eigenvalues(m)
    return test_statistic(spectrum, m.trace(), m.frobenius2(), gamma, p)


# ============================================================================
# Closed forms
# ============================================================================


def _closed_form_terms(gamma: float, p: float) -> Tuple[float, float, float, float]:
    """(m_0, delta, V_0, k4)."""
    if not 0.0 <= gamma < 1.0:
        raise GammaOutOfRange("gamma must lie in [0, 1)", gamma=gamma)
    _check_kurtosis(p)
    kappa = k4(p)
    g2 = gamma * gamma
    g4 = g2 * g2
    log_term = -math.log1p(-g2)
    inverse = 1.0 / k4_plus_2(p)
    m_0 = 0.5 * log_term - g2 / 2.0 + kappa * g4 / 4.0
    delta = log_term + g2 + (inverse - 0.5) * g4
    v_0 = 2.0 * log_term + 2.0 * g2 + (2.0 * inverse - 1.0) * g4
    return m_0, delta, v_0, kappa


def closed_form_moments(K: int, gamma: float, p: float) -> CltPrediction:
    """m_K = m_0 + K delta and V_0 for the statistic L_gamma."""
    if K < 0:
        raise InvalidK("K must be non-negative", k=K)
    m_0, delta, v_0, kappa = _closed_form_terms(gamma, p)
    return CltPrediction(mean=m_0 + K * delta, variance=v_0, k4=kappa, gamma=gamma, K=K)


def mean_shift(gamma: float, p: float) -> float:
    """delta = m_{K+1} - m_K."""
    return _closed_form_terms(gamma, p)[1]


def critical_value(cfg: TestConfig) -> float:
    """Midpoint (m_k1 + m_k2) / 2."""
    m_1 = closed_form_moments(cfg.k1, cfg.gamma, cfg.p).mean
    m_2 = closed_form_moments(cfg.k2, cfg.gamma, cfg.p).mean
    return (m_1 + m_2) / 2.0


def critical_value_expanded(cfg: TestConfig) -> float:
    """The same midpoint written out term by term."""
    g2 = cfg.gamma**2
    kappa = k4(cfg.p)
    half_sum = (cfg.k1 + cfg.k2) / 2.0
    return (
        -(half_sum + 0.5) * math.log(1.0 - g2)
        + (half_sum - 0.5) * g2
        + kappa * g2 * g2 / 4.0
        + half_sum * (1.0 / k4_plus_2(cfg.p) - 0.5) * g2 * g2
    )


def theoretical_error(cfg: TestConfig) -> float:
    """Limiting type I + type II error, erfc((k2 - k1)/4 * sqrt(delta))."""
    delta = mean_shift(cfg.gamma, cfg.p)
    return float(scipy.special.erfc((cfg.k2 - cfg.k1) / 4.0 * math.sqrt(delta)))


# ============================================================================
# Decisions
# ============================================================================


def decide(statistic: float, m_c: float) -> Decision:
    """Ties go to H1."""
    return Decision.ACCEPT_H1 if statistic <= m_c else Decision.REJECT_H1


def kappa_prime(statistic: float, gamma: float, p: float) -> Tuple[float, int]:
    """(L - m_0) / delta and its nearest non-negative integer."""
    m_0, delta, _, _ = _closed_form_terms(gamma, p)
    if delta <= 0.0:
        raise GammaOutOfRange("Rank estimation needs gamma > 0", gamma=gamma)
    value = (statistic - m_0) / delta
    return value, max(0, int(math.floor(value + 0.5)))


def _statistic_or_advise(m: SymMatrix, gamma: float, p: float, spectrum: Optional[Spectrum]):
    try:
        return compute_statistic(m, gamma, p, spectrum)
    except DegenerateSpectrum as exc:
        logger.warning(
            "Outlier past log singularity; signal above detection threshold",
            eigenvalue=exc.details.get("eigenvalue"),
            gamma=gamma,
        )
        raise StrongSignal(
            "Strong signal: outlier eigenvalue present, use PCA", **exc.details
        ) from exc


def estimate_rank(
    m: SymMatrix, gamma: float, p: float, spectrum: Optional[Spectrum] = None
) -> RankEstimate:
    """Estimate the number of spikes from L_gamma."""
    if not 0.0 < gamma < 1.0:
        raise GammaOutOfRange("gamma must lie in (0, 1)", gamma=gamma)
    statistic = _statistic_or_advise(m, gamma, p, spectrum)
    value, k_hat = kappa_prime(statistic, gamma, p)
    return RankEstimate(statistic=statistic, kappa_prime=value, k_hat=k_hat)


def run_test(m: SymMatrix, cfg: TestConfig, spectrum: Optional[Spectrum] = None) -> TestOutcome:
    """Accept H1 iff L_gamma <= m_c."""
    estimate = estimate_rank(m, cfg.gamma, cfg.p, spectrum)
    m_c = critical_value(cfg)
    return TestOutcome(
        statistic=estimate.statistic,
        m_c=m_c,
        decision=decide(estimate.statistic, m_c),
        kappa_prime=estimate.kappa_prime,
        k_hat=estimate.k_hat,
    )
