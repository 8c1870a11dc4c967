"""Lead-time discount schedules and construction of the diagonal weighting.

Each schedule maps a forecast lead time n (1-based, n = 1 is the interval
being dispatched) to a weight in (0, 1]. Weights shrink the trust placed in
prices further out in the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SCHEMES = ("none", "simulated_anneal", "cosine_anneal", "power_law")


@dataclass(frozen=True)
class DiscountSpec:
    """Discount scheme selector plus its hyperparameters.

    The "none" scheme pins the weight vector to all ones and forces the
    regularization factor to zero regardless of the requested lam.
    """

    scheme: str = "none"
    gamma0: float = 0.95
    lam: float = 0.0
    s: int = 1

    def __post_init__(self) -> None:
        violations = validate_spec(self)
        if violations:
            raise ValueError("invalid discount spec: " + "; ".join(violations))
        if self.scheme == "none" and self.lam != 0.0:
            object.__setattr__(self, "lam", 0.0)


def validate_spec(spec: DiscountSpec) -> list[str]:
    violations: list[str] = []
    if spec.scheme not in SCHEMES:
        violations.append(f"scheme: {spec.scheme!r} not one of {SCHEMES}")
    if not 0 < spec.gamma0 <= 1:
        violations.append("gamma0: must be in (0, 1]")
    if not spec.lam >= 0:
        violations.append("lambda: must be >= 0")
    if spec.s not in (1, 2):
        violations.append("s: must be 1 or 2")
    return violations


@dataclass(frozen=True)
class GammaVector:
    """Discount weights for one horizon, index n = 1..horizon."""

    weights: tuple[float, ...]
    horizon: int

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def weight(spec: DiscountSpec, n: int, t_k: int) -> float:
    """Weight for lead time n within a horizon of t_k intervals."""
    if not 1 <= n <= t_k:
        raise ValueError(f"lead time n={n} outside [1, {t_k}]")
    if spec.scheme == "none":
        return 1.0
    if spec.scheme == "simulated_anneal":
        return math.exp(-spec.gamma0 * (n - 1) / t_k)
    if spec.scheme == "cosine_anneal":
        return 0.5 + 0.5 * math.cos((n - 1) * math.pi / t_k)
    return spec.gamma0 ** (n - 1)


def build_gamma(spec: DiscountSpec, t_k: int) -> GammaVector:
    """Weight vector for a horizon of t_k intervals; cached per argument pair."""
    if t_k < 1:
        raise ValueError(f"horizon t_k={t_k} must be >= 1")
    return _build_gamma_cached(spec, t_k)


@lru_cache(maxsize=4096)
def _build_gamma_cached(spec: DiscountSpec, t_k: int) -> GammaVector:
    weights = tuple(weight(spec, n, t_k) for n in range(1, t_k + 1))
    return GammaVector(weights=weights, horizon=t_k)
