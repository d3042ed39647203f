"""
Spectra, linear spectral statistics and semicircle reference quantities.

Eigenvalues come from a dense symmetric eigensolve (LAPACK via scipy);
resolvent diagnostics use the spectrum for the normalized trace and a single
linear solve against the all-ones vector for the normalized entry sum.
"""

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.linalg
import structlog

from .config import config
from .errors import BranchCut, ConvergenceFailure, DimensionMismatch, DomainError, SingularShift
from .model import DeformationSpec, SbmParams, SpikeBasis, SymMatrix


logger = structlog.get_logger()

SpectralFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues sorted descending."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DimensionMismatch("Spectrum must be one-dimensional", shape=values.shape)
        if values.size > 1 and np.any(np.diff(values) > 0.0):
            raise DimensionMismatch("Spectrum must be sorted descending")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def largest(self) -> float:
        return float(self.values[0])

    def top(self, k: int) -> np.ndarray:
        return self.values[:k]

    def trace(self) -> float:
        return math.fsum(self.values)

    def sum_squares(self) -> float:
        return math.fsum(self.values * self.values)


@dataclass(frozen=True)
class ResolventProbe:
    """Resolvent diagnostics at a single spectral parameter z."""
    z: complex
    m_emp: complex
    s_emp: complex
    t_k: Optional[Tuple[complex, ...]] = None
    residual: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        record = {
            "z_re": self.z.real,
            "z_im": self.z.imag,
            "m_re": self.m_emp.real,
            "m_im": self.m_emp.imag,
            "s_re": self.s_emp.real,
            "s_im": self.s_emp.imag,
        }
        return record


# ============================================================================
# Eigenvalues and linear statistics
# ============================================================================


def eigenvalues(a: SymMatrix) -> Spectrum:
    """Full spectrum, descending."""
    try:
        values = scipy.linalg.eigh(a.values, eigvals_only=True, check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure("Symmetric eigensolver failed", n=a.n, reason=str(exc))
    return Spectrum(values[::-1].copy())


def top_eigenvalues(a: SymMatrix, k: int) -> Spectrum:
    """The k largest eigenvalues via a partial dense eigensolve."""
    k = max(1, min(k, a.n))
    try:
        values = scipy.linalg.eigh(
            a.values,
            eigvals_only=True,
            subset_by_index=[a.n - k, a.n - 1],
            check_finite=True,
        )
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure("Partial eigensolve failed", n=a.n, k=k, reason=str(exc))
    return Spectrum(values[::-1].copy())


def lss(spec: Spectrum, f: SpectralFunction) -> float:
    """Linear spectral statistic sum_i f(lambda_i)."""
    with np.errstate(all="ignore"):
        values = np.broadcast_to(np.asarray(f(spec.values), dtype=np.float64), spec.values.shape)
    bad = ~np.isfinite(values)
    if np.any(bad):
        index = int(np.argmax(bad))
        raise DomainError(
            "Test function undefined at an eigenvalue",
            eigenvalue=float(spec.values[index]),
            index=index,
        )
    return math.fsum(values)


# ============================================================================
# Semicircle law
# ============================================================================


def m_sc(z: complex) -> complex:
    """
    Stieltjes transform of the semicircle law, (-z + sqrt(z^2 - 4)) / 2.

    The square root is the branch with sqrt(z^2 - 4) ~ z at infinity, so
    m_sc maps C+ to C+ and vanishes at infinity.
    """
    z = complex(z)
    if z.imag == 0.0:
        x = z.real
        if abs(x) <= 2.0:
            raise BranchCut("m_sc is undefined on [-2, 2]", z=x)
        root = math.copysign(math.sqrt(x * x - 4.0), x)
        return complex((-x + root) / 2.0, 0.0)
    root = cmath.sqrt(z - 2.0) * cmath.sqrt(z + 2.0)
    return (-z + root) / 2.0


def theta_grid(grid_n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform trapezoid nodes and weights on [0, pi] with grid_n intervals."""
    theta = np.pi * np.arange(grid_n + 1) / grid_n
    weights = np.full(grid_n + 1, np.pi / grid_n)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return theta, weights


def semicircle_integral(f: SpectralFunction, grid_n: int = None) -> float:
    """Integral of f against the semicircle density, via x = 2 cos(theta)."""
    grid_n = grid_n or config.SEMICIRCLE_GRID
    theta, weights = theta_grid(grid_n)
    samples = np.broadcast_to(
        np.asarray(f(2.0 * np.cos(theta)), dtype=np.float64), theta.shape
    )
    density = (2.0 / np.pi) * np.sin(theta) ** 2
    return float(np.dot(weights, samples * density))


def xi4(params: SbmParams, exact: bool = True) -> float:
    """
    Normalized fourth cumulant (s_s + (K-1) s_d) / K with s = N q^2 kappa_4.

    ``exact=False`` returns the leading-order value 1.
    """
    if not exact:
        return 1.0

    def kappa4(p: float) -> float:
        variance = p * (1.0 - p)
        return variance * (1.0 - 6.0 * variance) / params.sigma**4

    scale = params.n * params.q**2
    s_s = scale * kappa4(params.p_s)
    s_d = scale * kappa4(params.p_d)
    return (s_s + (params.k - 1) * s_d) / params.k


def edge_estimate(params: SbmParams, exact_xi: bool = True) -> float:
    """Spectral edge location 2 + xi^4 / q^2 of the centered noise."""
    return 2.0 + xi4(params, exact=exact_xi) / params.q**2


def predicted_outliers(spec: DeformationSpec) -> List[float]:
    """Limiting top eigenvalues: d + 1/d when d > 1, else the bulk edge 2."""
    return [d + 1.0 / d if d > 1.0 else 2.0 for d in spec.d]


def predicted_bottom_outliers(spec: DeformationSpec) -> List[float]:
    """Mirror image for negative strengths: d + 1/d when d < -1, else -2."""
    return [d + 1.0 / d if d < -1.0 else -2.0 for d in reversed(spec.d)]


def count_outliers(spec: Spectrum, threshold: float = None) -> int:
    threshold = config.OUTLIER_THRESHOLD if threshold is None else threshold
    return int(np.count_nonzero(spec.values > threshold))


# ============================================================================
# Resolvent diagnostics
# ============================================================================


def _shifted_solve(h: SymMatrix, z: complex, rhs: np.ndarray) -> Tuple[np.ndarray, float]:
    shifted = h.values.astype(np.complex128) - z * np.eye(h.n)
    try:
        solution = scipy.linalg.solve(shifted, rhs, assume_a="sym", check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularShift("Shifted matrix is singular", z=z, reason=str(exc))
    residual = float(np.linalg.norm(shifted @ solution - rhs))
    return solution, residual


def resolvent_probe(
    h: SymMatrix,
    z: complex,
    k_list: Optional[Iterable[int]] = None,
    spectrum: Optional[Spectrum] = None,
) -> ResolventProbe:
    """
    m(z) = tr G / N from the spectrum, s(z) = 1^T G 1 / N from one solve.

    Args:
        h: Symmetric matrix
        z: Spectral parameter
        k_list: Optional row indices for T_k = (G 1)_k / sqrt(N)
        spectrum: Precomputed spectrum of h, reused across probe points
    """
    z = complex(z)
    spectrum = spectrum or eigenvalues(h)
    gaps = np.abs(spectrum.values - z)
    if np.min(gaps) <= config.SINGULAR_SHIFT_TOL:
        index = int(np.argmin(gaps))
        raise SingularShift(
            "z is an eigenvalue", z=z, eigenvalue=float(spectrum.values[index])
        )

    n = h.n
    m_emp = complex(np.sum(1.0 / (spectrum.values - z)) / n)

    ones = np.ones(n, dtype=np.complex128)
    solution, residual = _shifted_solve(h, z, ones)
    if residual > 1e-10 * math.sqrt(n):
        raise SingularShift("Linear solve residual too large", z=z, residual=residual)
    s_emp = complex(np.sum(solution) / n)

    t_k = None
    if k_list is not None:
        t_k = tuple(complex(solution[k]) / math.sqrt(n) for k in k_list)

    return ResolventProbe(z=z, m_emp=m_emp, s_emp=s_emp, t_k=t_k, residual=residual)


def spike_overlaps(h: SymMatrix, basis: SpikeBasis, z: complex) -> np.ndarray:
    """k x k matrix V^T G(z) V."""
    if basis.n != h.n:
        raise DimensionMismatch("Spike dimension differs from matrix", n=h.n, basis_n=basis.n)
    solution, _ = _shifted_solve(h, complex(z), basis.columns.astype(np.complex128))
    return basis.columns.T @ solution
