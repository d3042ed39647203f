"""
Named test functions for linear spectral statistics.

The CLI and experiment configs refer to f by key:

    x, x2, x4          monomials
    logdet:<gamma>     log(1 + gamma^2 - gamma x)
    phi:<gamma>:<p>    the optimal detection function phi_gamma
    cheb:<ell>         T_ell(x / 2)
"""

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .chebstats import cheb_T
from .detect import phi_gamma
from .errors import UnknownFunction


@dataclass(frozen=True)
class RegisteredFunction:
    key: str
    fn: Callable[[np.ndarray], np.ndarray]
    description: str

    def __call__(self, x):
        return self.fn(x)


_MONOMIALS: Dict[str, RegisteredFunction] = {
    "x": RegisteredFunction("x", lambda x: np.asarray(x, dtype=np.float64), "identity"),
    "x2": RegisteredFunction("x2", lambda x: np.asarray(x, dtype=np.float64) ** 2, "x^2"),
    "x4": RegisteredFunction("x4", lambda x: np.asarray(x, dtype=np.float64) ** 4, "x^4"),
}


def _float_arg(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise UnknownFunction("Malformed function parameter", key=key, value=raw)


def _logdet(gamma: float) -> Callable[[np.ndarray], np.ndarray]:
    def fn(x):
        return np.log(1.0 + gamma * gamma - gamma * np.asarray(x, dtype=np.float64))

    return fn


def _cheb(ell: int) -> Callable[[np.ndarray], np.ndarray]:
    def fn(x):
        return cheb_T(ell, np.asarray(x, dtype=np.float64) / 2.0)

    return fn


def resolve(key: str) -> RegisteredFunction:
    """Look up a test function by registry key."""
    if key in _MONOMIALS:
        return _MONOMIALS[key]

    head, _, rest = key.partition(":")
    parts = rest.split(":") if rest else []

    if head == "logdet" and len(parts) == 1:
        gamma = _float_arg(key, parts[0])
        return RegisteredFunction(key, _logdet(gamma), f"log(1 + {gamma}^2 - {gamma} x)")

    if head == "phi" and len(parts) == 2:
        gamma = _float_arg(key, parts[0])
        p = _float_arg(key, parts[1])
        return RegisteredFunction(
            key, lambda x: phi_gamma(x, gamma, p), f"phi_gamma(gamma={gamma}, p={p})"
        )

    if head == "cheb" and len(parts) == 1:
        try:
            ell = int(parts[0])
        except ValueError:
            raise UnknownFunction("Malformed Chebyshev order", key=key)
        if ell < 0:
            raise UnknownFunction("Chebyshev order must be non-negative", key=key)
        return RegisteredFunction(key, _cheb(ell), f"T_{ell}(x/2)")

    raise UnknownFunction("Unknown test function", key=key, known=available())


def available() -> List[str]:
    return sorted(_MONOMIALS) + ["logdet:<gamma>", "phi:<gamma>:<p>", "cheb:<ell>"]
