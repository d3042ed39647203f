"""
Stochastic block models and their centered / deformed variants.

This module defines, validates and samples balanced SBMs, the centered
generalized SBM noise matrix ``H = M - E[M]`` and rank-k deformations
``H + V D V^T``, together with the block-structured spike basis spanning the
non-null eigenspace of the expectation matrix.

All sampling is a pure function of ``(params, seed)``: matrices are
immutable once built and may be shared read-only between threads.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Tuple, Union

import numpy as np
import structlog

from .config import config
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    DomainError,
    InvalidK,
    NoFeasibleSolution,
    NotAdjacency,
    NotBalanced,
    ProbabilityOutOfRange,
)


logger = structlog.get_logger()

SEED_MAX = 2**64 - 1


# ============================================================================
# Domain Types
# ============================================================================


@dataclass(frozen=True)
class SbmParams:
    """
    Balanced SBM parameters with derived quantities.

    The plain constructor performs no checks so that degenerate fixtures
    (p in {0, 1}) can be built in tests; public code goes through
    ``validate_params`` or ``SbmParams.create``.
    """
    n: int
    k: int
    p_s: float
    p_d: float

    @classmethod
    def create(cls, n: int, k: int, p_s: float, p_d: float) -> "SbmParams":
        return validate_params(cls(n=n, k=k, p_s=p_s, p_d=p_d))

    @property
    def block_size(self) -> int:
        return self.n // self.k

    @property
    def p_a(self) -> float:
        return (self.p_s + (self.k - 1) * self.p_d) / self.k

    @property
    def sigma(self) -> float:
        return _sigma(self.n, self.k, self.p_s, self.p_d)

    @property
    def sigma_hat(self) -> float:
        """sqrt(N p_a (1 - p_a)); close to sigma when p_a is small."""
        p_a = self.p_a
        return math.sqrt(self.n * p_a * (1.0 - p_a))

    @property
    def gamma_n(self) -> float:
        return self.n * (self.p_s - self.p_d) / (self.sigma * self.k)

    @property
    def q(self) -> float:
        return math.sqrt(self.n * self.p_a)

    @property
    def snr(self) -> float:
        denominator = self.k * (self.p_s + (self.k - 1) * self.p_d)
        return self.n * (self.p_s - self.p_d) ** 2 / denominator

    @property
    def above_ks_threshold(self) -> bool:
        return self.gamma_n > 1.0

    def labels(self) -> np.ndarray:
        """Contiguous community labels c(i) = floor(i K / N)."""
        return community_labels(self.n, self.k)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "p_s": self.p_s,
            "p_d": self.p_d,
            "p_a": self.p_a,
            "sigma": self.sigma,
            "gamma_n": self.gamma_n,
            "q": self.q,
            "snr": self.snr,
            "above_ks_threshold": self.above_ks_threshold,
        }


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Dense real symmetric matrix; read-only after construction."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionMismatch("Matrix must be square", shape=values.shape)
        if not np.array_equal(values, values.T):
            raise DimensionMismatch("Matrix is not exactly symmetric", n=values.shape[0])
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.values))

    def frobenius2(self) -> float:
        return float(np.sum(self.values * self.values))


@dataclass(frozen=True, eq=False)
class SpikeBasis:
    """k orthonormal n-vectors, each constant on the community blocks."""
    columns: np.ndarray

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def k(self) -> int:
        return self.columns.shape[1]

    def select(self, k: int) -> "SpikeBasis":
        """The first k columns."""
        if not 0 <= k <= self.k:
            raise DimensionMismatch("Not enough spike columns", requested=k, available=self.k)
        return SpikeBasis(columns=self.columns[:, :k])

    def gram(self) -> np.ndarray:
        return self.columns.T @ self.columns


@dataclass(frozen=True)
class DeformationSpec:
    """Deformation strengths d_1 >= ... >= d_k."""
    d: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = tuple(float(v) for v in self.d)
        if not all(math.isfinite(v) for v in values):
            raise DomainError("Deformation strengths must be finite", d=values)
        object.__setattr__(self, "d", tuple(sorted(values, reverse=True)))

    @classmethod
    def constant(cls, value: float, k: int) -> "DeformationSpec":
        return cls(d=(value,) * k)

    @property
    def k(self) -> int:
        return len(self.d)


# ============================================================================
# Parameters
# ============================================================================


def _sigma(n: int, k: int, p_s: float, p_d: float) -> float:
    return math.sqrt(n * (p_s * (1.0 - p_s) + (k - 1) * p_d * (1.0 - p_d)) / k)


def community_labels(n: int, k: int) -> np.ndarray:
    return (np.arange(n) * k) // n


def validate_params(raw: Union[SbmParams, Mapping]) -> SbmParams:
    """
    Validate candidate parameters.

    Accepts an ``SbmParams`` or a mapping with keys {n, k, p_s, p_d} or
    {n, k, p_a, gamma}; the latter is resolved through ``solve_probs``.
    """
    if isinstance(raw, Mapping):
        n, k = int(raw["n"]), int(raw["k"])
        if "p_s" in raw and "p_d" in raw:
            candidate = SbmParams(n=n, k=k, p_s=float(raw["p_s"]), p_d=float(raw["p_d"]))
        elif "p_a" in raw and "gamma" in raw:
            _check_shape(n, k)
            p_s, p_d = solve_probs(n, k, float(raw["p_a"]), float(raw["gamma"]))
            candidate = SbmParams(n=n, k=k, p_s=p_s, p_d=p_d)
        else:
            raise ProbabilityOutOfRange(
                "Params need either (p_s, p_d) or (p_a, gamma)", keys=sorted(raw)
            )
    else:
        candidate = raw

    _check_shape(candidate.n, candidate.k)
    probabilities = (("p_s", candidate.p_s), ("p_d", candidate.p_d))
    if all(p in (0.0, 1.0) for _, p in probabilities):
        raise DegenerateVariance("sigma vanishes", p_s=candidate.p_s, p_d=candidate.p_d)
    for name, p in probabilities:
        if not 0.0 < p < 1.0:
            raise ProbabilityOutOfRange(f"{name} must lie in (0, 1)", **{name: p})
    if not 0.0 < candidate.p_a < 1.0:
        raise ProbabilityOutOfRange("p_a must lie in (0, 1)", p_a=candidate.p_a)
    return candidate


def _check_shape(n: int, k: int) -> None:
    if n < 1:
        raise DimensionMismatch("N must be positive", n=n)
    if k < 1:
        raise InvalidK("K must be positive", k=k)
    if n % k != 0:
        raise NotBalanced("N must be divisible by K", n=n, k=k)


def solve_probs(n: int, k: int, p_a: float, gamma: float) -> Tuple[float, float]:
    """
    Invert gamma_N = N (p_s - p_d) / (sigma K) at fixed p_a.

    Fixed-point iteration on delta = p_s - p_d, starting from
    sigma_hat = sqrt(N p_a (1 - p_a)).
    """
    if not 0.0 < p_a < 1.0:
        raise ProbabilityOutOfRange("p_a must lie in (0, 1)", p_a=p_a)
    if not gamma >= 0.0:
        raise NoFeasibleSolution("gamma must be non-negative", gamma=gamma)

    sigma = math.sqrt(n * p_a * (1.0 - p_a))
    for iteration in range(config.SOLVE_MAX_ITER):
        delta = gamma * sigma * k / n
        p_s = p_a + (k - 1) * delta / k
        p_d = p_a - delta / k
        if not (0.0 < p_s < 1.0 and 0.0 < p_d < 1.0):
            raise NoFeasibleSolution(
                "Probabilities left (0, 1)", p_s=p_s, p_d=p_d, iteration=iteration
            )
        updated = _sigma(n, k, p_s, p_d)
        if abs(updated - sigma) <= config.SOLVE_TOL * sigma:
            break
        sigma = updated
    else:
        raise NoFeasibleSolution("Fixed point did not converge", gamma=gamma, p_a=p_a)

    return p_s, p_d


def sparse_params(n: int, k: int, phi: float, gamma: float) -> SbmParams:
    """Params in the sparse regime q = N^phi, i.e. p_a = N^(2 phi - 1)."""
    p_a = float(n) ** (2.0 * phi - 1.0)
    p_s, p_d = solve_probs(n, k, p_a, gamma)
    return SbmParams.create(n, k, p_s, p_d)


def rank_params(n: int, rank: int, p_a: float, gamma: float) -> SbmParams:
    """
    SBM whose rescaled matrix is a rank-``rank`` deformation with d = gamma.

    That is an SBM with rank + 1 communities; rank 0 is Erdos-Renyi(p_a).
    """
    if rank < 0:
        raise InvalidK("Spike rank must be non-negative", rank=rank)
    if rank == 0:
        return SbmParams.create(n, 1, p_a, p_a)
    p_s, p_d = solve_probs(n, rank + 1, p_a, gamma)
    return SbmParams.create(n, rank + 1, p_s, p_d)


# ============================================================================
# Sampling
# ============================================================================


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64 counter-based generator keyed through SeedSequence."""
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise DomainError("Seed must be an unsigned 64-bit integer", seed=seed)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _mirror_upper(values: np.ndarray) -> np.ndarray:
    upper = np.triu(values)
    return upper + np.triu(upper, 1).T


def sample_adjacency(params: SbmParams, seed: int) -> SymMatrix:
    """Symmetric 0/1 adjacency; the diagonal is sampled like intra-community entries."""
    rng = make_rng(seed)
    labels = params.labels()
    same = labels[:, None] == labels[None, :]
    uniforms = rng.random((params.n, params.n))
    edges = np.where(same, uniforms < params.p_s, uniforms < params.p_d)
    del uniforms
    return SymMatrix(_mirror_upper(edges.astype(np.float64)))


def rescale(adj: SymMatrix, params: SbmParams, use_sigma_hat: bool = False) -> SymMatrix:
    """
    M_ij = (A_ij - p_a) / sigma.

    ``use_sigma_hat`` divides by sqrt(N p_a (1 - p_a)) instead, the scaling
    available when only the density of an observed graph is known.
    """
    if adj.n != params.n:
        raise DimensionMismatch("Adjacency size differs from params", n=adj.n, expected=params.n)
    binary = (adj.values == 0.0) | (adj.values == 1.0)
    if not np.all(binary):
        row, col = np.argwhere(~binary)[0]
        raise NotAdjacency(
            "Adjacency entries must be 0 or 1",
            row=int(row),
            col=int(col),
            value=float(adj.values[row, col]),
        )
    p_a = params.p_a
    sigma = params.sigma_hat if use_sigma_hat else params.sigma
    high = (1.0 - p_a) / sigma
    low = -p_a / sigma
    return SymMatrix(np.where(adj.values != 0.0, high, low))


def expectation_matrix(params: SbmParams) -> SymMatrix:
    """Closed-form E[M]: (K-1)x within blocks and -x across, x = (p_s - p_d)/(sigma K)."""
    x = (params.p_s - params.p_d) / (params.sigma * params.k)
    labels = params.labels()
    same = labels[:, None] == labels[None, :]
    return SymMatrix(np.where(same, (params.k - 1) * x, -x))


def sample_cgsbm(params: SbmParams, seed: int) -> SymMatrix:
    """Centered noise H = M - E[M] of the Bernoulli SBM."""
    rescaled = rescale(sample_adjacency(params, seed), params)
    return SymMatrix(rescaled.values - expectation_matrix(params).values)


def sample_gaussian_cgsbm(params: SbmParams, seed: int) -> SymMatrix:
    """
    Gaussian-entry cgSBM with the Bernoulli block variances.

    Experimental test double only; the Bernoulli sampler is the model.
    """
    rng = make_rng(seed)
    labels = params.labels()
    same = labels[:, None] == labels[None, :]
    variance = np.where(
        same,
        params.p_s * (1.0 - params.p_s),
        params.p_d * (1.0 - params.p_d),
    ) / params.sigma**2
    noise = rng.standard_normal((params.n, params.n)) * np.sqrt(variance)
    return SymMatrix(_mirror_upper(noise))


def estimate_p_a(adj: SymMatrix) -> float:
    """Plug-in p_a: mean adjacency entry."""
    return float(np.mean(adj.values))


# ============================================================================
# Spikes and deformations
# ============================================================================


def build_spike(n: int, k: int) -> SpikeBasis:
    """
    Orthonormal block-constant basis of the non-null eigenspace of E[M].

    Gram-Schmidt on w_i = 1_{block i} - 1_{block i+1}, i = 1..K-1.
    """
    if k < 2:
        raise InvalidK("Spike basis needs K >= 2", k=k)
    _check_shape(n, k)

    labels = community_labels(n, k)
    columns = []
    for i in range(k - 1):
        w = (labels == i).astype(np.float64) - (labels == i + 1).astype(np.float64)
        for v in columns:
            w = w - np.dot(v, w) * v
        columns.append(w / np.linalg.norm(w))
    return SpikeBasis(columns=np.column_stack(columns))


def deform(h: SymMatrix, basis: SpikeBasis, spec: DeformationSpec) -> SymMatrix:
    """H + sum_i d_i v_i v_i^T."""
    if basis.n != h.n:
        raise DimensionMismatch("Spike dimension differs from matrix", n=h.n, basis_n=basis.n)
    if basis.k != spec.k:
        raise DimensionMismatch("Spike rank differs from deformation", k=basis.k, d=spec.k)

    values = h.values.copy()
    for i, d in enumerate(spec.d):
        v = basis.columns[:, i]
        values += d * np.outer(v, v)
    return SymMatrix(_mirror_upper(values))


def sample_deformed(
    params: SbmParams,
    seed: int,
    d: Optional[Iterable[float]] = None,
    basis: Optional[SpikeBasis] = None,
) -> SymMatrix:
    """cgSBM noise plus an explicit block-structured deformation."""
    h = sample_cgsbm(params, seed)
    spec = DeformationSpec(tuple(d or ()))
    if spec.k == 0:
        return h
    if basis is None:
        basis = build_spike(params.n, max(params.k, 2))
    return deform(h, basis.select(spec.k), spec)
