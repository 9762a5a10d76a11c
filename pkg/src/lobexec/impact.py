"""Power-law limit order book: depth, impacted price and walk-the-book cost.

Depth at relative price ``s`` (mid = 1) is ``(V / epsilon) * |s - 1| ** beta``.
A market order of ``a`` shares (positive buys, negative sells) consumes
depth until the relative price ``r(a)``; the dollar loss of doing so is

    C(epsilon, beta) * S * V ** (-1 / (beta + 1)) * |a| ** ((beta + 2) / (beta + 1))

with ``C(epsilon, beta) = (epsilon * (beta + 1)) ** ((beta + 2) / (beta + 1)) / (beta + 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVolumeError, DomainError
from .rng import uniform_block

__all__ = [
    "ImpactParams",
    "BetaNoiseSpec",
    "liquidity_coefficient",
    "density",
    "impacted_relative_price",
    "walk_cost",
    "sample_beta",
    "sample_betas",
    "VOLUME_FLOOR",
]

# Minute bars occasionally print zero volume; the cost diverges at V = 0.
VOLUME_FLOOR = 1.0


def _check_params(epsilon, beta):
    if not (np.all(np.isfinite(epsilon)) and np.all(np.isfinite(beta))):
        raise DomainError("epsilon and beta must be finite")
    if np.any(np.asarray(epsilon) <= 0):
        raise DomainError(f"epsilon must be positive, got {epsilon!r}")
    if np.any(np.asarray(beta) < 0):
        raise DomainError(f"beta must be non-negative, got {beta!r}")


def liquidity_coefficient(epsilon, beta):
    """Return C(epsilon, beta). Vectorizes over array ``beta`` (noisy books)."""
    _check_params(epsilon, beta)
    beta = np.asarray(beta, dtype=float)
    q = (beta + 2.0) / (beta + 1.0)
    out = (epsilon * (beta + 1.0)) ** q / (beta + 2.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ImpactParams:
    epsilon: float = 0.003
    beta: float = 0.67

    def __post_init__(self):
        _check_params(self.epsilon, self.beta)

    @property
    def c_coeff(self) -> float:
        return liquidity_coefficient(self.epsilon, self.beta)

    @property
    def cost_exponent(self) -> float:
        """(beta + 2) / (beta + 1), always in (1, 2]."""
        return (self.beta + 2.0) / (self.beta + 1.0)

    @property
    def volume_exponent(self) -> float:
        """1 / (beta + 1)."""
        return 1.0 / (self.beta + 1.0)

    def with_beta(self, beta: float) -> "ImpactParams":
        return ImpactParams(self.epsilon, beta)


def density(s, volume, params: ImpactParams):
    """Order depth (shares per unit relative price) at relative tick ``s``."""
    if np.any(np.asarray(volume) < 0):
        raise DomainError("volume must be non-negative")
    return (np.asarray(volume, dtype=float) / params.epsilon) * np.abs(np.asarray(s, dtype=float) - 1.0) ** params.beta


def impacted_relative_price(a, volume, params: ImpactParams):
    """Relative price ``r(a)`` reached by an order of ``a`` shares."""
    volume = np.asarray(volume, dtype=float)
    if np.any(volume <= 0):
        raise DegenerateVolumeError("impacted price undefined at zero volume")
    a = np.asarray(a, dtype=float)
    depth = (params.epsilon * (params.beta + 1.0) * np.abs(a) / volume) ** params.volume_exponent
    out = 1.0 + np.sign(a) * depth
    return float(out) if out.ndim == 0 else out


def walk_cost(price, volume, a, params: ImpactParams, beta=None):
    """Dollar loss from walking the book with an order of ``a`` shares.

    ``beta`` overrides ``params.beta`` and may be an array (one exponent per
    trade, as in the noisy-book evaluation). Volumes are NOT floored here.
    """
    volume = np.asarray(volume, dtype=float)
    if np.any(volume <= 0):
        raise DegenerateVolumeError("walk cost diverges at zero volume; floor volume first")
    if beta is None:
        beta = params.beta
    c = liquidity_coefficient(params.epsilon, beta)
    beta = np.asarray(beta, dtype=float)
    p = 1.0 / (beta + 1.0)
    out = c * np.asarray(price, dtype=float) * volume ** (-p) * np.abs(np.asarray(a, dtype=float)) ** (1.0 + p)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BetaNoiseSpec:
    base_beta: float = 0.67
    half_width: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.half_width < 0:
            raise DomainError("half_width must be non-negative")
        if self.base_beta - self.half_width <= 0:
            raise DomainError("base_beta - half_width must stay positive")


def sample_betas(spec: BetaNoiseSpec, start: int, n: int) -> np.ndarray:
    """Exponents at stream positions ``start .. start + n - 1``."""
    if spec.half_width == 0:
        return np.full(n, spec.base_beta)
    u = uniform_block(spec.seed, start, n)
    return spec.base_beta + spec.half_width * (2.0 * u - 1.0)


def sample_beta(spec: BetaNoiseSpec, position: int) -> float:
    return float(sample_betas(spec, position, 1)[0])

