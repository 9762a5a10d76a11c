"""TWAP and VWAP liquidation schedules and benchmark inventory paths.

Sign convention: inventory ``x0 > 0`` is a sell program, actions are
negative; ``x0 < 0`` is a buy program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation, DegenerateVolumeError
from .market_data import MINUTES, N_TRADES, TRADE_MINUTES


@dataclass(frozen=True, eq=False)
class Schedule:
    """Actions ``a_0 .. a_{T-1}``; action ``a_t`` is executed at trade time t+1."""

    actions: np.ndarray
    x0: float

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=float)
        object.__setattr__(self, "actions", a)
        if a.ndim != 1 or a.size == 0:
            raise ConfigError("a schedule needs at least one action")
        tol = 1e-9 * max(abs(self.x0), 1.0)
        if abs(math.fsum(a) + self.x0) > tol:
            raise ContractViolation(f"actions sum to {math.fsum(a)!r}, expected {-self.x0!r}")

    @property
    def n_trades(self) -> int:
        return self.actions.size

    def inventory(self) -> np.ndarray:
        """X_0 .. X_T with X_T pinned to exactly zero."""
        path = self.x0 + np.concatenate([[0.0], np.cumsum(self.actions)])
        path[-1] = 0.0
        return path

    def rounded(self) -> "Schedule":
        """Whole-share actions; the rounding residual goes into the last trade."""
        a = np.round(self.actions)
        a[-1] = -round(self.x0) - math.fsum(a[:-1])
        return Schedule(a, float(round(self.x0)))

    @classmethod
    def from_inventory(cls, path) -> "Schedule":
        path = np.asarray(path, dtype=float)
        if path[-1] != 0.0:
            raise ContractViolation(f"inventory must end at zero, got {path[-1]!r}")
        return cls(np.diff(path), float(path[0]))


def _normalize_last(actions, x0):
    # push the floating-point residual into the final trade so sum == -x0
    actions = np.array(actions, dtype=float)
    actions[-1] = -x0 - math.fsum(actions[:-1])
    return actions


def twap_schedule(x0: float, n_trades: int = N_TRADES) -> Schedule:
    if n_trades < 1:
        raise ConfigError("TWAP needs at least one trade")
    return Schedule(_normalize_last(np.full(n_trades, -x0 / n_trades), x0), float(x0))


def vwap_schedule(x0: float, profile) -> Schedule:
    """Trade proportionally to the volume profile sampled at the trade times."""
    profile = np.asarray(profile, dtype=float)
    if profile.ndim != 1 or profile.size == 0:
        raise ConfigError("profile must be a non-empty vector")
    if not np.all(np.isfinite(profile)) or np.any(profile <= 0):
        raise DegenerateVolumeError("volume profile entries must be positive")
    weights = profile / math.fsum(profile)
    return Schedule(_normalize_last(-x0 * weights, x0), float(x0))


def profile_at_trades(profile) -> np.ndarray:
    """Restrict a 390-minute profile to the 78 trade minutes."""
    profile = np.asarray(profile, dtype=float)
    if profile.shape[-1] != MINUTES:
        raise ConfigError(f"expected a {MINUTES}-minute profile")
    return profile[..., TRADE_MINUTES - 1]


def twap_inventory(x0, minute):
    """Remaining TWAP inventory at a minute (0..390), minute resolution."""
    return np.asarray(x0, dtype=float) * (1.0 - np.asarray(minute, dtype=float) / MINUTES)


def vwap_inventory(x0, profile, minute):
    """Remaining inventory under minute-by-minute profile-proportional trading."""
    profile = np.asarray(profile, dtype=float)
    cum = np.concatenate([np.zeros(profile.shape[:-1] + (1,)), np.cumsum(profile, axis=-1)], axis=-1)
    frac = cum / cum[..., -1:]
    frac = np.take(frac, np.asarray(minute), axis=-1)
    return np.asarray(x0, dtype=float)[..., None] * (1.0 - frac) if np.ndim(x0) else x0 * (1.0 - frac)


@dataclass(frozen=True, eq=False)
class BenchmarkInventories:
    """Remaining inventory X_t in shares per ticker and minute 0..390."""

    twap_path: np.ndarray
    vwap_path: np.ndarray


def benchmark_inventories(x0, profiles, minutes=None) -> BenchmarkInventories:
    """Benchmark inventories for every ticker at ``minutes`` (default 0..390).

    ``x0`` is one value per ticker, ``profiles`` has shape (n_tickers, 390).
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), profiles.shape[:1])
    if minutes is None:
        minutes = np.arange(MINUTES + 1)
    minutes = np.asarray(minutes)
    if np.any(minutes < 0) or np.any(minutes > MINUTES):
        raise ConfigError("minute must lie in 0..390")
    twap = x0[:, None] * (1.0 - minutes[None, :] / MINUTES)
    vwap = vwap_inventory(x0, profiles, minutes)
    return BenchmarkInventories(twap, vwap)
