"""Minute-bar panels: CSV ingestion, binary cache, folds, volume profiles and
a synthetic log-normal market.

Minutes are numbered 1..390. Trades happen every five minutes, at minutes
5, 10, ..., 390. Arrays indexed by minute use position ``t - 1``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateVolumeError, ParseError, StructuralError
from .impact import VOLUME_FLOOR
from .rng import stream

MINUTES = 390
TRADE_INTERVAL = 5
N_TRADES = MINUTES // TRADE_INTERVAL
TRADE_MINUTES = np.arange(TRADE_INTERVAL, MINUTES + 1, TRADE_INTERVAL)
TRADE_INDEX = TRADE_MINUTES - 1

CSV_HEADER = ("date", "minute", "ticker", "price", "volume")
CACHE_MAGIC = b"EXSP"
CACHE_VERSION = 1


@dataclass(frozen=True, eq=False)
class Panel:
    """Dense (ticker, day, minute) price and volume arrays."""

    tickers: tuple
    days: tuple
    price: np.ndarray
    volume: np.ndarray
    fill_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.tickers), len(self.days), MINUTES)
        if self.price.shape != shape or self.volume.shape != shape:
            raise StructuralError(f"expected arrays of shape {shape}, got {self.price.shape} / {self.volume.shape}")
        if len(set(self.tickers)) != len(self.tickers):
            raise StructuralError("duplicate tickers")
        if any(a >= b for a, b in zip(self.days, self.days[1:])):
            raise StructuralError("days must be strictly increasing")
        if not np.all(np.isfinite(self.price)) or np.any(self.price <= 0):
            raise StructuralError("prices must be finite and positive")
        if not np.all(np.isfinite(self.volume)) or np.any(self.volume < 0):
            raise StructuralError("volumes must be finite and non-negative")
        for arr in (self.price, self.volume):
            arr.flags.writeable = False

    @property
    def shape(self):
        return self.price.shape

    def ticker_index(self, ticker) -> int:
        try:
            return self.tickers.index(ticker)
        except ValueError:
            raise ConfigError(f"unknown ticker {ticker!r}") from None

    def select_days(self, days) -> "Panel":
        days = np.asarray(days, dtype=int)
        return Panel(
            self.tickers,
            tuple(self.days[d] for d in days),
            self.price[:, days].copy(),
            self.volume[:, days].copy(),
        )

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self.tickers == other.tickers
            and self.days == other.days
            and np.array_equal(self.price, other.price)
            and np.array_equal(self.volume, other.volume)
        )


# --------------------------------------------------------------------------
# CSV ingestion


def _parse_row(row, lineno):
    if len(row) != 5:
        raise ParseError(f"expected 5 fields, got {len(row)}", lineno)
    date_s, minute_s, ticker, price_s, volume_s = (f.strip() for f in row)
    try:
        dt.date.fromisoformat(date_s)
    except ValueError:
        raise ParseError(f"bad date {date_s!r}", lineno) from None
    try:
        minute = int(minute_s)
    except ValueError:
        raise ParseError(f"bad minute {minute_s!r}", lineno) from None
    if not 1 <= minute <= MINUTES:
        raise ParseError(f"minute {minute} outside 1..{MINUTES}", lineno)
    if not ticker:
        raise ParseError("empty ticker", lineno)
    try:
        price = float(price_s)
        volume = float(volume_s)
    except ValueError:
        raise ParseError("non-numeric price or volume", lineno) from None
    if not (math.isfinite(price) and price > 0):
        raise ParseError(f"price must be finite and positive, got {price_s}", lineno)
    if not (math.isfinite(volume) and volume >= 0):
        raise ParseError(f"volume must be finite and non-negative, got {volume_s}", lineno)
    return date_s, minute, ticker, price, volume


def parse_panel(source) -> Panel:
    """Read ``date,minute,ticker,price,volume`` rows into a dense panel.

    Missing minutes are forward-filled in price (back-filled before the first
    print of the day) and zero-filled in volume; ``Panel.fill_counts`` records
    how many cells were filled per ticker. A ticker absent for a whole day
    present in the file is a structural error.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_panel(fh)

    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"header must be {','.join(CSV_HEADER)}", 1)

    cells = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        date_s, minute, ticker, price, volume = _parse_row(row, lineno)
        key = (ticker, date_s, minute)
        if key in cells:
            raise StructuralError(f"line {lineno}: duplicate row for {ticker} {date_s} minute {minute}")
        cells[key] = (price, volume)

    tickers = tuple(sorted({k[0] for k in cells}))
    days = tuple(sorted({k[1] for k in cells}))
    present = {(k[0], k[1]) for k in cells}
    for t in tickers:
        for d in days:
            if (t, d) not in present:
                raise StructuralError(f"ticker {t} has no bars on {d}")

    ti = {t: i for i, t in enumerate(tickers)}
    di = {d: i for i, d in enumerate(days)}
    price = np.full((len(tickers), len(days), MINUTES), np.nan)
    volume = np.zeros_like(price)
    for (t, d, m), (p, v) in cells.items():
        price[ti[t], di[d], m - 1] = p
        volume[ti[t], di[d], m - 1] = v

    missing = np.isnan(price)
    fill_counts = {t: int(missing[i].sum()) for t, i in ti.items()}
    if missing.any():
        price = _fill_prices(price)
    return Panel(tickers, days, price, volume, fill_counts)


def _fill_prices(price):
    out = price.copy()
    n_t, n_d, n_m = out.shape
    flat = out.reshape(-1, n_m)
    for row in flat:
        bad = np.isnan(row)
        if not bad.any():
            continue
        idx = np.where(~bad, np.arange(n_m), 0)
        np.maximum.accumulate(idx, out=idx)
        first = np.argmax(~bad)
        row[:] = row[idx]
        row[:first] = row[first]
    return out


def write_csv(panel: Panel, target) -> None:
    """Serialize with shortest round-trip float formatting."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            return write_csv(panel, fh)
    w = csv.writer(target, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for di, day in enumerate(panel.days):
        for ti, ticker in enumerate(panel.tickers):
            for m in range(MINUTES):
                w.writerow((day, m + 1, ticker, repr(float(panel.price[ti, di, m])), repr(float(panel.volume[ti, di, m]))))


def panel_to_csv_text(panel: Panel) -> str:
    buf = io.StringIO()
    write_csv(panel, buf)
    return buf.getvalue()


# --------------------------------------------------------------------------
# Binary cache: magic, u32 version, u32 x3 dims, u32 label-block length,
# UTF-8 labels (tickers then days, newline separated), f64 price, f64 volume.


def write_cache(panel: Panel, path) -> None:
    labels = "\n".join(panel.tickers + panel.days).encode("utf-8")
    n_t, n_d, n_m = panel.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<4I", CACHE_VERSION, n_t, n_d, n_m))
        fh.write(struct.pack("<I", len(labels)))
        fh.write(labels)
        fh.write(np.ascontiguousarray(panel.price, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(panel.volume, dtype="<f8").tobytes())


def read_cache(path) -> Panel:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise StructuralError(f"{path}: not a panel cache")
    version, n_t, n_d, n_m = struct.unpack_from("<4I", data, 4)
    if version != CACHE_VERSION:
        raise StructuralError(f"{path}: unsupported cache version {version}")
    if n_m != MINUTES:
        raise StructuralError(f"{path}: expected {MINUTES} minutes, got {n_m}")
    (n_lab,) = struct.unpack_from("<I", data, 20)
    pos = 24 + n_lab
    labels = data[24:pos].decode("utf-8").split("\n") if n_lab else []
    if len(labels) != n_t + n_d:
        raise StructuralError(f"{path}: label block does not match dims")
    size = n_t * n_d * n_m
    arr = np.frombuffer(data, dtype="<f8", count=2 * size, offset=pos).astype(float)
    shape = (n_t, n_d, n_m)
    return Panel(tuple(labels[:n_t]), tuple(labels[n_t:]), arr[:size].reshape(shape).copy(), arr[size:].reshape(shape).copy())


# --------------------------------------------------------------------------
# Folds


@dataclass(frozen=True)
class FoldSpec:
    """Half-open day-index ranges ``[start, stop)`` on the panel's day axis."""

    index: int
    train: tuple
    test: tuple

    def __post_init__(self):
        (a, b), (c, d) = self.train, self.test
        if not (0 <= a < b <= c < d):
            raise ConfigError(f"invalid fold ranges {self.train} / {self.test}")

    @property
    def train_days(self) -> np.ndarray:
        return np.arange(*self.train)

    @property
    def test_days(self) -> np.ndarray:
        return np.arange(*self.test)

    def describe(self, days) -> str:
        return (
            f"fold {self.index + 1}: train {days[self.train[0]]} to {days[self.train[1] - 1]} "
            f"({self.train[1] - self.train[0]} days), test {days[self.test[0]]} to {days[self.test[1] - 1]} "
            f"({self.test[1] - self.test[0]} days)"
        )


def build_folds(n_days, n_folds: int = 9, train_days: int = 60, test_days: int = 45) -> list:
    """Rolling folds: fold k+1 starts training where fold k starts testing.

    ``n_days`` may be a Panel. The last fold's test window is truncated at the
    end of the data; every training window must be complete.
    """
    if isinstance(n_days, Panel):
        n_days = len(n_days.days)
    if n_folds < 1 or train_days < 1 or test_days < 1:
        raise ConfigError("fold counts and sizes must be positive")
    if n_days < train_days + test_days:
        raise ConfigError(f"{n_days} days cannot hold a {train_days}/{test_days} fold")
    folds = []
    for k in range(n_folds):
        start = k * train_days
        test_start = start + train_days
        if test_start >= n_days:
            raise ConfigError(f"{n_days} days cannot hold {n_folds} folds of {train_days}/{test_days}")
        folds.append(FoldSpec(k, (start, test_start), (test_start, min(test_start + test_days, n_days))))
    return folds


# --------------------------------------------------------------------------
# Volume profile and average prices


def power_mean_volume(volumes, beta: float, axis=0):
    """(mean V ** (-1/(beta+1))) ** (-(beta+1)), volumes floored at one share."""
    v = np.maximum(np.asarray(volumes, dtype=float), VOLUME_FLOOR)
    p = 1.0 / (beta + 1.0)
    return np.mean(v ** (-p), axis=axis) ** (-1.0 / p)


def estimate_volume_profile(panel: Panel, ticker, days, beta: float = 0.67) -> np.ndarray:
    """Per-minute expected-volume proxy from the given training days."""
    days = np.asarray(days, dtype=int)
    if days.size == 0:
        raise ConfigError("volume profile needs at least one day")
    i = ticker if isinstance(ticker, (int, np.integer)) else panel.ticker_index(ticker)
    return power_mean_volume(panel.volume[i, days], beta, axis=0)


def twap_price(prices, trade_minutes=TRADE_MINUTES) -> float:
    """Mean price over the trade minutes (``None``: every entry)."""
    prices = np.asarray(prices, dtype=float)
    if trade_minutes is not None:
        prices = prices[np.asarray(trade_minutes) - 1]
    return float(math.fsum(prices) / prices.size)


def vwap_price(prices, volumes, trade_minutes=TRADE_MINUTES) -> float:
    prices = np.asarray(prices, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if trade_minutes is not None:
        idx = np.asarray(trade_minutes) - 1
        prices, volumes = prices[idx], volumes[idx]
    total = math.fsum(volumes)
    if total <= 0:
        raise DegenerateVolumeError("VWAP undefined with zero volume at the trade times")
    return float(math.fsum(prices * volumes) / total)


def average_daily_volume(panel: Panel, ticker, days) -> float:
    i = ticker if isinstance(ticker, (int, np.integer)) else panel.ticker_index(ticker)
    return float(panel.volume[i, np.asarray(days, dtype=int)].sum(axis=1).mean())


# --------------------------------------------------------------------------
# Synthetic market


def u_shape(n_minutes: int = MINUTES, open_amp: float = 2.5, close_amp: float = 3.0, width: float = 0.08) -> np.ndarray:
    """Relative intraday volume level at minutes 0..n_minutes (length n+1)."""
    x = np.arange(n_minutes + 1) / n_minutes
    return 1.0 + open_amp * np.exp(-x / width) + close_amp * np.exp(-(1.0 - x) / width)


@dataclass(frozen=True)
class SynthSpec:
    """Log-normal minute volumes and driftless log-normal prices.

    ``vol_sigma`` and ``price_sigma`` are per-minute standard deviations of
    log increments (scalars or length-390 arrays). Volume drifts are set so
    that the power-mean profile equals ``volume_level * shape`` exactly for
    ``calib_beta``.
    """

    n_tickers: int = 5
    n_days: int = 105
    seed: int = 0
    price_level: float = 100.0
    volume_level: float = 10_000.0
    level_spread: float = 2.0
    vol_sigma: object = 0.03
    price_sigma: object = 0.0008
    correlation: float = 0.5
    u_shape: bool = True
    open_amp: float = 2.5
    close_amp: float = 3.0
    calib_beta: float = 0.67
    start_date: str = "2020-01-02"

    def __post_init__(self):
        if self.n_tickers < 1 or self.n_days < 1:
            raise ConfigError("n_tickers and n_days must be positive")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError("correlation must lie in [0, 1)")
        if self.price_level <= 0 or self.volume_level <= 0 or self.level_spread < 1:
            raise ConfigError("levels must be positive and level_spread >= 1")
        for name in ("vol_sigma", "price_sigma"):
            s = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (MINUTES,))
            if not np.all(np.isfinite(s)) or np.any(s < 0):
                raise ConfigError(f"{name} must be finite and non-negative")
        if self.calib_beta < 0:
            raise ConfigError("calib_beta must be non-negative")

    def shape(self) -> np.ndarray:
        if not self.u_shape:
            return np.ones(MINUTES + 1)
        shp = u_shape(MINUTES, self.open_amp, self.close_amp)
        if np.any(shp <= 0) or not np.all(np.isfinite(shp)):
            raise ConfigError("infeasible volume shape")
        return shp

    def sigmas(self):
        vs = np.broadcast_to(np.asarray(self.vol_sigma, dtype=float), (MINUTES,)).copy()
        ps = np.broadcast_to(np.asarray(self.price_sigma, dtype=float), (MINUTES,)).copy()
        return vs, ps

    def log_volume_drift(self) -> np.ndarray:
        """Drift into minutes 1..390, offsetting the convexity of V ** (-1/(beta+1))."""
        shp = self.shape()
        vs, _ = self.sigmas()
        p = 1.0 / (self.calib_beta + 1.0)
        return np.log(shp[1:] / shp[:-1]) + 0.5 * p * vs**2

    def levels(self):
        """Per-ticker (price, volume) levels, geometric across tickers."""
        if self.n_tickers == 1:
            k = np.zeros(1)
        else:
            k = np.linspace(-1.0, 1.0, self.n_tickers)
        spread = self.level_spread ** k
        return self.price_level * spread[::-1], self.volume_level * spread

    def profile(self) -> np.ndarray:
        """Exact power-mean volume profile per ticker, shape (n_tickers, 390)."""
        _, vol_lv = self.levels()
        return vol_lv[:, None] * self.shape()[None, 1:]

    def trading_days(self) -> tuple:
        start = np.datetime64(self.start_date, "D")
        first = np.busday_offset(start, 0, roll="forward")
        days = np.busday_offset(first, np.arange(self.n_days))
        return tuple(str(d) for d in days)


def _correlated_normals(gen, size, n_tickers, rho):
    common = gen.standard_normal(size[:1] + (1,) + size[2:])
    own = gen.standard_normal(size)
    return math.sqrt(rho) * common + math.sqrt(1.0 - rho) * own


def simulate_log_volume(spec: SynthSpec, z: np.ndarray, ticker_levels) -> np.ndarray:
    """Minute volumes from standard-normal shocks ``z`` of shape (..., 390)."""
    vs, _ = spec.sigmas()
    drift = spec.log_volume_drift()
    log_v0 = np.log(np.asarray(ticker_levels, dtype=float) * spec.shape()[0])
    return np.exp(log_v0[..., None] + np.cumsum(drift + vs * z, axis=-1))


def simulate_prices(spec: SynthSpec, z: np.ndarray, ticker_levels) -> np.ndarray:
    _, ps = spec.sigmas()
    return np.asarray(ticker_levels, dtype=float)[..., None] * np.exp(np.cumsum(ps * z - 0.5 * ps**2, axis=-1))


def synth_generate(spec: SynthSpec) -> Panel:
    """Synthetic panel. Price and volume shocks use separate random streams,
    so prices are independent of volumes; both are equicorrelated across
    tickers."""
    size = (spec.n_days, spec.n_tickers, MINUTES)
    price_lv, vol_lv = spec.levels()
    zp = _correlated_normals(stream(spec.seed, 0), size, spec.n_tickers, spec.correlation)
    zv = _correlated_normals(stream(spec.seed, 1), size, spec.n_tickers, spec.correlation)
    price = simulate_prices(spec, zp, price_lv).transpose(1, 0, 2)
    volume = simulate_log_volume(spec, zv, vol_lv).transpose(1, 0, 2)
    tickers = tuple(f"SYN{i:02d}" for i in range(spec.n_tickers))
    return Panel(tickers, spec.trading_days(), np.ascontiguousarray(price), np.ascontiguousarray(volume))
