"""Episode simulation, fold evaluation and report files.

A strategy is anything that yields an inventory path at the 79 trade times
0, 5, ..., 390 (``X_0 = x0``, ``X_390 = 0``). Costs are charged per trade
with the walk-the-book formula using the bar at the trade minute.
"""

from __future__ import annotations

import csv
import io
import json
import math
import pathlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation
from .impact import VOLUME_FLOOR, BetaNoiseSpec, ImpactParams, sample_betas, walk_cost
from .market_data import MINUTES, N_TRADES, TRADE_MINUTES, FoldSpec, Panel
from .policy_net import TrainConfig, TrainResult, fold_profiles, initial_inventory, policy_inventory
from .strategies import Schedule, profile_at_trades, twap_schedule, vwap_schedule

STRATEGIES = ("twap", "vwap", "lstm")

REPORT_COLUMNS = (
    "scenario", "fold", "ticker", "strategy", "n_days", "daily_volume", "x0", "equity_value",
    "mean_cost", "strategy_bps", "pooled_bps", "lstm_cost", "lstm_bps", "savings", "savings_bps",
)
SERIES_COLUMNS = ("scenario", "fold", "ticker", "strategy", "kind", "index", "value")


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    trade_costs: np.ndarray
    total: float
    inventory: np.ndarray
    actions: np.ndarray
    x0: float
    avg_price: float

    @property
    def bps(self) -> float:
        return 1e4 * self.total / (abs(self.x0) * self.avg_price)


def beta_draws(noise: BetaNoiseSpec | None, day_index: int) -> np.ndarray | None:
    """Exponents for the 78 trades of a day; shared by every strategy and ticker."""
    if noise is None:
        return None
    return sample_betas(noise, day_index * N_TRADES, N_TRADES)


def _as_path(strategy) -> np.ndarray:
    if isinstance(strategy, Schedule):
        return strategy.inventory()
    path = np.asarray(strategy, dtype=float)
    if path.shape != (N_TRADES + 1,):
        raise ConfigError(f"inventory path must have {N_TRADES + 1} points, got shape {path.shape}")
    return path


def run_episode(strategy, price, volume, impact: ImpactParams, noise: BetaNoiseSpec | None = None,
                day_index: int = 0) -> EpisodeResult:
    """Cost of one ticker-day.

    ``strategy`` is a Schedule or a 79-point inventory path; ``price`` and
    ``volume`` are the day's 390 minute bars. In noisy mode the exponent of
    trade l is drawn at stream position ``day_index * 78 + l``.
    """
    path = _as_path(strategy)
    if path[-1] != 0.0:
        raise ContractViolation(f"strategy leaves {path[-1]!r} shares at the close")
    price = np.asarray(price, dtype=float)
    volume = np.asarray(volume, dtype=float)
    if price.shape != (MINUTES,) or volume.shape != (MINUTES,):
        raise ConfigError("a day needs 390 price and volume bars")
    a = np.diff(path)
    s = price[TRADE_MINUTES - 1]
    v = np.maximum(volume[TRADE_MINUTES - 1], VOLUME_FLOOR)
    costs = walk_cost(s, v, a, impact, beta=beta_draws(noise, day_index))
    total = 0.0
    for c in costs:
        total += c
    return EpisodeResult(costs, total, path, a, float(path[0]), float(np.mean(price)))


# --------------------------------------------------------------------------
# Fold evaluation


@dataclass
class TickerEval:
    """Results for one (scenario, fold, ticker); ``daily`` maps strategy -> EpisodeResults."""

    scenario: str
    fold: int
    ticker: str
    x0: float
    daily_volume: float
    avg_prices: np.ndarray
    daily: dict = field(default_factory=dict)

    @property
    def equity_value(self) -> float:
        return abs(self.x0) * float(np.mean(self.avg_prices))

    def costs(self, strategy) -> np.ndarray:
        return np.array([r.total for r in self.daily[strategy]])

    def mean_cost(self, strategy) -> float:
        return math.fsum(self.costs(strategy)) / len(self.daily[strategy])

    def bps(self, strategy) -> float:
        """Mean of the per-day bps."""
        return math.fsum(r.bps for r in self.daily[strategy]) / len(self.daily[strategy])

    def pooled_bps(self, strategy) -> float:
        """Total cost over total traded value."""
        return 1e4 * math.fsum(self.costs(strategy)) / (abs(self.x0) * math.fsum(self.avg_prices))

    def savings(self, strategy) -> float:
        """Mean daily cost of ``strategy`` minus that of the policy, same days."""
        return math.fsum(self.costs(strategy) - self.costs("lstm")) / len(self.daily[strategy])

    def intraday(self, strategy) -> np.ndarray:
        return np.mean([r.trade_costs for r in self.daily[strategy]], axis=0)


@dataclass
class EvalReport:
    entries: list = field(default_factory=list)

    def strategies(self) -> list:
        seen = []
        for e in self.entries:
            seen += [s for s in e.daily if s not in seen]
        return [s for s in STRATEGIES if s in seen]

    def total_cost(self, strategy, scenario=None) -> float:
        return math.fsum(e.mean_cost(strategy) for e in self.entries
                         if scenario is None or e.scenario == scenario)

    def rows(self) -> list:
        """Flat rows in REPORT_COLUMNS order; one per (entry, strategy)."""
        out = []
        for e in self.entries:
            has_lstm = "lstm" in e.daily
            for s in STRATEGIES:
                if s not in e.daily:
                    continue
                row = {
                    "scenario": e.scenario, "fold": e.fold, "ticker": e.ticker, "strategy": s,
                    "n_days": len(e.daily[s]), "daily_volume": e.daily_volume, "x0": e.x0,
                    "equity_value": e.equity_value, "mean_cost": e.mean_cost(s),
                    "strategy_bps": e.bps(s), "pooled_bps": e.pooled_bps(s),
                    "lstm_cost": None, "lstm_bps": None, "savings": None, "savings_bps": None,
                }
                if has_lstm:
                    row["lstm_cost"] = e.mean_cost("lstm")
                    row["lstm_bps"] = e.bps("lstm")
                    row["savings"] = e.savings(s)
                    row["savings_bps"] = e.bps(s) - e.bps("lstm")
                out.append(row)
        return out

    def series(self) -> list:
        """Daily cost bars and mean intraday cost curves per strategy."""
        out = []
        for e in self.entries:
            for s in STRATEGIES:
                if s not in e.daily:
                    continue
                for k, c in enumerate(e.costs(s)):
                    out.append((e.scenario, e.fold, e.ticker, s, "daily", k, float(c)))
                for k, c in enumerate(e.intraday(s)):
                    out.append((e.scenario, e.fold, e.ticker, s, "intraday", k + 1, float(c)))
        return out


def strategy_paths(panel: Panel, fold: FoldSpec, ticker_idx: int, config: TrainConfig,
                   strategies=STRATEGIES, policy: TrainResult | None = None) -> tuple:
    """(x0, {strategy: (n_test_days, 79) inventory paths}) for one ticker."""
    days = fold.test_days
    paths = {}
    if "lstm" in strategies:
        if policy is None:
            raise ConfigError(f"no trained policy for {panel.tickers[ticker_idx]} fold {fold.index}")
        x0 = policy.fold.x0
    else:
        x0 = initial_inventory(panel, ticker_idx, fold.train_days, config)
    if "twap" in strategies:
        paths["twap"] = np.tile(twap_schedule(x0).inventory(), (days.size, 1))
    if "vwap" in strategies:
        # the profile is estimated on the training window only
        profile = fold_profiles(panel, fold.train_days, config.beta)[ticker_idx]
        paths["vwap"] = np.tile(vwap_schedule(x0, profile_at_trades(profile)).inventory(), (days.size, 1))
    if "lstm" in strategies:
        paths["lstm"] = policy_inventory(policy, None, panel, days)
    return x0, paths


def evaluate_fold(panel: Panel, fold: FoldSpec, config: TrainConfig, policies: dict | None = None,
                  tickers=None, strategies=STRATEGIES, noise: BetaNoiseSpec | None = None,
                  impact: ImpactParams | None = None, scenario: str = "base") -> EvalReport:
    """Run every test day of ``fold`` for each ticker and strategy.

    ``policies`` maps ticker symbol to a TrainResult. All strategies on a
    given (day, trade) see the same beta draw.
    """
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        raise ConfigError(f"unknown strategies {sorted(unknown)}")
    impact = impact or config.impact
    policies = policies or {}
    tickers = list(panel.tickers) if tickers is None else list(tickers)
    days = fold.test_days
    if days.size == 0:
        raise ConfigError(f"fold {fold.index} has no test days")
    report = EvalReport()
    for sym in tickers:
        i = panel.ticker_index(sym)
        x0, paths = strategy_paths(panel, fold, i, config, strategies, policies.get(sym))
        avg_prices = panel.price[i, days].mean(axis=1)
        adv = float(panel.volume[i, days].sum(axis=1).mean())
        entry = TickerEval(scenario, fold.index, sym, x0, adv, avg_prices)
        for s in STRATEGIES:
            if s in paths:
                entry.daily[s] = [
                    run_episode(paths[s][k], panel.price[i, d], panel.volume[i, d], impact, noise, int(d))
                    for k, d in enumerate(days)
                ]
        report.entries.append(entry)
    return report


def merge_reports(reports) -> EvalReport:
    out = EvalReport()
    for r in reports:
        out.entries.extend(r.entries)
    return out


# --------------------------------------------------------------------------
# Serialization (floats with 17 significant digits)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_value(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "null"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return json.dumps(v)


def report_csv_text(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in report.rows():
        w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def report_json_text(report: EvalReport) -> str:
    lines = []
    for row in report.rows():
        body = ", ".join(f"{json.dumps(c)}: {_json_value(row[c])}" for c in REPORT_COLUMNS)
        lines.append("    {" + body + "}")
    cols = ", ".join(json.dumps(c) for c in REPORT_COLUMNS)
    return '{\n  "columns": [' + cols + '],\n  "rows": [\n' + ",\n".join(lines) + ("\n" if lines else "") + "  ]\n}\n"


def series_csv_text(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for rec in report.series():
        w.writerow([_fmt(v) for v in rec])
    return buf.getvalue()


def emit_report(report: EvalReport, out_dir, fmt: str = "csv", stem: str = "report") -> list:
    """Write ``<stem>.<fmt>`` and ``<stem>_series.csv`` into ``out_dir``; returns the paths."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    out_dir = pathlib.Path(out_dir)
    main = out_dir / f"{stem}.{fmt}"
    text = report_csv_text(report) if fmt == "csv" else report_json_text(report)
    main.write_text(text, encoding="utf-8")
    series = out_dir / f"{stem}_series.csv"
    series.write_text(series_csv_text(report), encoding="utf-8")
    return [main, series]


_INT_COLUMNS = {"fold", "n_days"}
_STR_COLUMNS = {"scenario", "ticker", "strategy"}


def _parse_cell(col, text):
    if col in _STR_COLUMNS:
        return text
    if text == "" or text is None:
        return None
    return int(text) if col in _INT_COLUMNS else float(text)


def parse_report(path) -> list:
    """Read back the rows of a CSV or JSON report as dicts."""
    path = pathlib.Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        doc = json.loads(text)
        return [{c: (float(r[c]) if isinstance(r[c], float) else r[c]) for c in doc["columns"]} for r in doc["rows"]]
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{c: _parse_cell(c, r[c]) for c in REPORT_COLUMNS} for r in rows]
