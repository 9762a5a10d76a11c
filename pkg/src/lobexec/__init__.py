"""Optimal execution backtests under a power-law limit order book.

Modules: ``impact`` (walk-the-book cost), ``market_data`` (minute panels,
folds, synthetic market), ``strategies`` (TWAP/VWAP), ``policy_net``
(recurrent execution policy with exact gradients), ``backtest`` (episodes
and reports), ``oracle`` (optimality checks) and ``cli``.
"""

from .errors import (
    ConfigError,
    ContractViolation,
    DataError,
    DegenerateVolumeError,
    DomainError,
    LobexecError,
    NumericalError,
    ParseError,
    StructuralError,
)
from .impact import BetaNoiseSpec, ImpactParams, liquidity_coefficient, walk_cost
from .market_data import FoldSpec, Panel, SynthSpec, build_folds, synth_generate
from .strategies import Schedule, twap_schedule, vwap_schedule

__version__ = "0.1.0"
