"""Two-layer LSTM execution policy with exact backpropagation through time.

The network reads one feature vector per minute and emits, through a
sigmoid head, the fraction of the initial inventory still held. Only the
outputs at trade minutes 5, 10, ..., 385 are traded on; inventory at the
close (minute 390) is forced to zero.

Gate blocks are stacked in the order (input, forget, candidate, output) and
pre-activations are ``x @ W + h_prev @ U + b``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, NumericalError, StructuralError
from .impact import VOLUME_FLOOR, ImpactParams, liquidity_coefficient
from .market_data import MINUTES, N_TRADES, TRADE_MINUTES, Panel, average_daily_volume, estimate_volume_profile
from .rng import stream
from .strategies import benchmark_inventories

HIDDEN = 50
LAST_DECISION_MINUTE = TRADE_MINUTES[-2]  # 385; later outputs never trade
N_STEPS = int(LAST_DECISION_MINUTE)
# step index (0-based) of the output used at each of the 77 interior trade times
DECISION_STEPS = TRADE_MINUTES[:-1] - 1
TRADE_INTERVAL_F = float(TRADE_MINUTES[0])

PARAM_NAMES = ("W1", "U1", "b1", "W2", "U2", "b2", "w_out", "b_out")

CHECKPOINT_MAGIC = b"EXPW"
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------
# Weights


class PolicyWeights:
    """Named parameter arrays of the policy network."""

    def __init__(self, params: dict):
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise StructuralError(f"missing parameters {sorted(missing)}")
        self.params = {k: np.asarray(params[k], dtype=float) for k in PARAM_NAMES}
        d, g = self.params["W1"].shape
        h = g // 4
        expected = {
            "W1": (d, 4 * h), "U1": (h, 4 * h), "b1": (4 * h,),
            "W2": (h, 4 * h), "U2": (h, 4 * h), "b2": (4 * h,),
            "w_out": (h,), "b_out": (1,),
        }
        for k, shp in expected.items():
            if self.params[k].shape != shp:
                raise StructuralError(f"{k} has shape {self.params[k].shape}, expected {shp}")

    @classmethod
    def initialize(cls, n_inputs: int, hidden: int = HIDDEN, seed: int = 0) -> "PolicyWeights":
        """Uniform in +-1/sqrt(fan_in), seeded."""
        gen = stream(seed, 0)

        def u(shape, fan_in):
            r = 1.0 / math.sqrt(fan_in)
            return gen.uniform(-r, r, size=shape)

        h = hidden
        return cls({
            "W1": u((n_inputs, 4 * h), n_inputs),
            "U1": u((h, 4 * h), h),
            "b1": u((4 * h,), h),
            "W2": u((h, 4 * h), h),
            "U2": u((h, 4 * h), h),
            "b2": u((4 * h,), h),
            "w_out": u((h,), h),
            "b_out": u((1,), h),
        })

    @classmethod
    def zeros(cls, n_inputs: int, hidden: int = HIDDEN) -> "PolicyWeights":
        h = hidden
        return cls({
            "W1": np.zeros((n_inputs, 4 * h)), "U1": np.zeros((h, 4 * h)), "b1": np.zeros(4 * h),
            "W2": np.zeros((h, 4 * h)), "U2": np.zeros((h, 4 * h)), "b2": np.zeros(4 * h),
            "w_out": np.zeros(h), "b_out": np.zeros(1),
        })

    @property
    def n_inputs(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params["U1"].shape[0]

    def __getitem__(self, name):
        return self.params[name]

    def copy(self) -> "PolicyWeights":
        return PolicyWeights({k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def with_flat(self, vec) -> "PolicyWeights":
        out, pos = {}, 0
        for k in PARAM_NAMES:
            n = self.params[k].size
            out[k] = np.asarray(vec[pos:pos + n], dtype=float).reshape(self.params[k].shape)
            pos += n
        return PolicyWeights(out)

    def census(self) -> dict:
        """Parameter counts per block, plus the count under the common
        convention of two bias vectors per gate layer and a 100-wide head."""
        counts = {k: int(v.size) for k, v in self.params.items()}
        d, h = self.n_inputs, self.hidden
        counts["total"] = sum(counts.values())
        counts["double_bias_100_head"] = 4 * h * (d + h + 2) + 4 * h * (2 * h + 2) + (h + 1) * 100
        return counts

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def __eq__(self, other):
        return isinstance(other, PolicyWeights) and all(np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)


@dataclass
class RecurrentState:
    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, hidden: int = HIDDEN, batch=None) -> "RecurrentState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(*(np.zeros(shape) for _ in range(4)))


# --------------------------------------------------------------------------
# Forward pass


def _cell(z, c_prev, h):
    i = _sigmoid_np(z[..., :h])
    f = _sigmoid_np(z[..., h:2 * h])
    g = np.tanh(z[..., 2 * h:3 * h])
    o = _sigmoid_np(z[..., 3 * h:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def forward(weights: PolicyWeights, state: RecurrentState, features):
    """One minute of the policy: returns (inventory fraction, new state)."""
    p = weights.params
    h = weights.hidden
    x = np.asarray(features, dtype=float)
    h1, c1 = _cell(x @ p["W1"] + state.h1 @ p["U1"] + p["b1"], state.c1, h)
    h2, c2 = _cell(h1 @ p["W2"] + state.h2 @ p["U2"] + p["b2"], state.c2, h)
    y = _sigmoid_np(h2 @ p["w_out"] + p["b_out"][0])
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite policy output")
    return y, RecurrentState(h1, c1, h2, c2)


def _sigmoid_np(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


@njit(cache=True)
def _layer_backward_kernel(dh_seq, ut, cs, tcs, acts, dz):
    t_len, b, h = dh_seq.shape
    dc = np.zeros((b, h))
    dh_next = np.zeros((b, h))
    for t in range(t_len - 1, -1, -1):
        for n in range(b):
            for j in range(h):
                ig = acts[t, n, j]
                fg = acts[t, n, h + j]
                gg = acts[t, n, 2 * h + j]
                og = acts[t, n, 3 * h + j]
                tc = tcs[t, n, j]
                c_prev = cs[t - 1, n, j] if t > 0 else 0.0
                dh = dh_seq[t, n, j] + dh_next[n, j]
                d = dc[n, j] + dh * og * (1.0 - tc * tc)
                dz[t, n, j] = d * gg * ig * (1.0 - ig)
                dz[t, n, h + j] = d * c_prev * fg * (1.0 - fg)
                dz[t, n, 2 * h + j] = d * ig * (1.0 - gg * gg)
                dz[t, n, 3 * h + j] = dh * tc * og * (1.0 - og)
                dc[n, j] = d * fg
        dh_next = np.dot(dz[t], ut)


def _layer_forward(zx, u):
    """Run one LSTM layer; ``zx`` holds input projections, time-major (T, B, 4H)."""
    t_len, b, g4 = zx.shape
    h = g4 // 4
    hs = np.empty((t_len, b, h))
    cs = np.empty((t_len, b, h))
    tcs = np.empty((t_len, b, h))
    acts = np.empty((t_len, b, g4))
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    g_tmp = np.empty((b, h))
    with np.errstate(over="ignore"):
        for t in range(t_len):
            a = acts[t]
            np.matmul(h_prev, u, out=a)
            a += zx[t]
            np.tanh(a[:, 2 * h:3 * h], out=g_tmp)
            # sigmoid over the whole block, then restore the tanh candidate
            np.negative(a, out=a)
            np.exp(a, out=a)
            a += 1.0
            np.reciprocal(a, out=a)
            a[:, 2 * h:3 * h] = g_tmp
            c = cs[t]
            np.multiply(a[:, h:2 * h], c_prev, out=c)
            np.multiply(a[:, :h], g_tmp, out=g_tmp)
            c += g_tmp
            np.tanh(c, out=tcs[t])
            np.multiply(a[:, 3 * h:], tcs[t], out=hs[t])
            h_prev, c_prev = hs[t], c
    return hs, cs, tcs, acts


def _layer_backward(dh_seq, u, cs, tcs, acts):
    """Gradients w.r.t. the pre-activations, time-major (T, B, 4H)."""
    t_len, b, h = dh_seq.shape
    dz = np.empty((t_len, b, 4 * h))
    _layer_backward_kernel(np.ascontiguousarray(dh_seq), np.ascontiguousarray(u.T), cs, tcs, acts, dz)
    return dz


@dataclass
class SequenceCache:
    x: np.ndarray
    hs1: np.ndarray
    cs1: np.ndarray
    tcs1: np.ndarray
    acts1: np.ndarray
    hs2: np.ndarray
    cs2: np.ndarray
    tcs2: np.ndarray
    acts2: np.ndarray
    y: np.ndarray


def forward_sequence(weights: PolicyWeights, features, return_cache: bool = False):
    """Inventory fractions for a batch of sequences; ``features`` is (B, T, D).

    Returns (B, T) outputs. The cache keeps time-major (T, B, .) arrays.
    """
    p = weights.params
    x = np.asarray(features, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[-1] != weights.n_inputs:
        raise ConfigError(f"expected {weights.n_inputs} features, got {x.shape[-1]}")
    x = np.ascontiguousarray(x.transpose(1, 0, 2))
    hs1, cs1, tcs1, acts1 = _layer_forward(x @ p["W1"] + p["b1"], p["U1"])
    hs2, cs2, tcs2, acts2 = _layer_forward(hs1 @ p["W2"] + p["b2"], p["U2"])
    y = _sigmoid_np(hs2 @ p["w_out"] + p["b_out"][0]).T
    if not np.all(np.isfinite(y)):
        bad = np.argwhere(~np.isfinite(y))[0]
        raise NumericalError(f"non-finite policy output at sequence {bad[0]}, minute {bad[1] + 1}")
    if return_cache:
        return y, SequenceCache(x, hs1, cs1, tcs1, acts1, hs2, cs2, tcs2, acts2, y)
    return y


# --------------------------------------------------------------------------
# Episodes and loss


@dataclass
class Episodes:
    """A batch of ticker-days ready for the network.

    ``coef[b, l]`` is C * S * V ** (-1/(beta+1)) at trade l of day b and
    ``power`` the matching exponent (beta+2)/(beta+1); ``x0`` is per day.
    """

    features: np.ndarray
    coef: np.ndarray
    power: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        b = self.features.shape[0]
        self.coef = np.asarray(self.coef, dtype=float).reshape(b, N_TRADES)
        self.power = np.broadcast_to(np.asarray(self.power, dtype=float), (b, N_TRADES))
        self.x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (b,))

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Episodes":
        return Episodes(self.features[idx], self.coef[idx], self.power[idx], self.x0[idx])


def cost_coefficients(price, volume, impact: ImpactParams, betas=None):
    """Per-trade multipliers and exponents from (.., 390) minute arrays."""
    s = np.asarray(price)[..., TRADE_MINUTES - 1]
    v = np.maximum(np.asarray(volume)[..., TRADE_MINUTES - 1], VOLUME_FLOOR)
    beta = impact.beta if betas is None else np.asarray(betas, dtype=float)
    c = liquidity_coefficient(impact.epsilon, beta)
    p = 1.0 / (np.asarray(beta) + 1.0)
    return c * s * v ** (-p), np.broadcast_to(1.0 + p, s.shape).copy()


def inventory_from_output(y, x0):
    """X at trade times 0, 5, ..., 390 from the fractions at decision steps."""
    y = np.atleast_2d(y)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), y.shape[:1])
    path = np.empty((y.shape[0], N_TRADES + 1))
    path[:, 0] = x0
    path[:, 1:-1] = x0[:, None] * y[:, DECISION_STEPS]
    path[:, -1] = 0.0
    return path


def _trade_costs(path, coef, power):
    a = np.diff(path, axis=1)
    return coef * np.abs(a) ** power, a


def episode_loss(weights: PolicyWeights, episodes: Episodes) -> float:
    """Total walk-the-book cost in dollars, summed over the batch."""
    y = forward_sequence(weights, episodes.features[:, :N_STEPS])
    costs, _ = _trade_costs(inventory_from_output(y, episodes.x0), episodes.coef, episodes.power)
    total = float(costs.sum())
    if not math.isfinite(total):
        raise NumericalError("non-finite episode loss")
    return total


def _outer_sum(a, b):
    """sum over (time, batch) of outer(a, b)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def gradient(weights: PolicyWeights, episodes: Episodes):
    """(loss, gradient dict) by reverse mode through the unrolled recursion."""
    p = weights.params
    y, cache = forward_sequence(weights, episodes.features[:, :N_STEPS], return_cache=True)
    x0 = episodes.x0
    path = inventory_from_output(y, x0)
    costs, a = _trade_costs(path, episodes.coef, episodes.power)
    loss = float(costs.sum())
    if not math.isfinite(loss):
        raise NumericalError("non-finite episode loss")

    # d cost / d a; exponent > 1 so the derivative vanishes at a = 0
    q = episodes.power
    da = episodes.coef * q * np.abs(a) ** (q - 1.0) * np.sign(a)
    dpath = np.zeros_like(path)
    dpath[:, 1:] += da
    dpath[:, :-1] -= da
    dy = np.zeros_like(y)
    dy[:, DECISION_STEPS] = x0[:, None] * dpath[:, 1:-1]

    dpre = np.ascontiguousarray((dy * y * (1.0 - y)).T)  # time-major
    grads = {
        "w_out": np.tensordot(dpre, cache.hs2, axes=([0, 1], [0, 1])),
        "b_out": np.array([dpre.sum()]),
    }
    dh2 = dpre[..., None] * p["w_out"]
    dz2 = _layer_backward(dh2, p["U2"], cache.cs2, cache.tcs2, cache.acts2)
    grads["W2"] = _outer_sum(cache.hs1, dz2)
    grads["U2"] = _outer_sum(cache.hs2[:-1], dz2[1:])
    grads["b2"] = dz2.sum(axis=(0, 1))
    dh1 = dz2 @ p["W2"].T
    dz1 = _layer_backward(dh1, p["U1"], cache.cs1, cache.tcs1, cache.acts1)
    grads["W1"] = _outer_sum(cache.x, dz1)
    grads["U1"] = _outer_sum(cache.hs1[:-1], dz1[1:])
    grads["b1"] = dz1.sum(axis=(0, 1))
    return loss, grads


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(weights: PolicyWeights, grads: dict, state: AdamState, lr: float) -> PolicyWeights:
    """Bias-corrected Adam update, in place; returns ``weights``."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k in PARAM_NAMES:
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        weights.params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return weights


# --------------------------------------------------------------------------
# Features


@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, raw) -> "FeatureScaler":
        flat = raw.reshape(-1, raw.shape[-1])
        mean = np.nanmean(flat, axis=0)
        std = np.nanstd(flat, axis=0)
        std[~(std > 0)] = 1.0
        return cls(mean, std)

    def transform(self, raw) -> np.ndarray:
        out = (raw - self.mean) / self.std
        # no history before minute 1: unseen inputs sit at the training mean
        out[np.isnan(out)] = 0.0
        return out


def n_features(n_tickers: int) -> int:
    return 1 + 4 * n_tickers


def raw_features(price, volume, vwap_frac, minutes=None):
    """Unscaled inputs for minutes ``minutes`` (default 1..385) of several days.

    ``price`` and ``volume`` are (n_tickers, n_days, 390); ``vwap_frac`` is the
    remaining VWAP inventory fraction per ticker for minutes 0..390. Market
    data and benchmark inventories enter with a one-minute lag, so minute 1
    sees the full initial inventory; log volume is used.
    """
    if minutes is None:
        minutes = np.arange(1, N_STEPS + 1)
    minutes = np.asarray(minutes)
    if np.any(minutes < 1) or np.any(minutes > MINUTES):
        raise ConfigError("feature minute must lie in 1..390")
    n_t, n_d, _ = price.shape
    out = np.empty((n_d, minutes.size, n_features(n_t)))
    out[..., 0] = minutes / MINUTES
    lag = minutes - 2  # array index of minute t-1
    seen = lag >= 0
    pv = np.full((n_t, n_d, minutes.size), np.nan)
    vv = np.full_like(pv, np.nan)
    pv[..., seen] = price[..., lag[seen]]
    vv[..., seen] = np.log(np.maximum(volume[..., lag[seen]], VOLUME_FLOOR))
    out[..., 1:1 + n_t] = pv.transpose(1, 2, 0)
    out[..., 1 + n_t:1 + 2 * n_t] = vv.transpose(1, 2, 0)
    out[..., 1 + 2 * n_t:1 + 3 * n_t] = np.asarray(vwap_frac)[:, minutes - 1].T[None]
    out[..., 1 + 3 * n_t:] = (1.0 - (minutes - 1) / MINUTES)[None, :, None]
    return out


def feature_vector(prev_price, prev_volume, vwap_frac, minute, scaler: FeatureScaler):
    """Scaled input for a single minute; ``prev_*`` hold minute t-1 data
    (``None`` at minute 1) and ``vwap_frac`` the VWAP fractions at t-1."""
    if not 1 <= minute <= MINUTES:
        raise ConfigError("feature minute must lie in 1..390")
    vwap_frac = np.asarray(vwap_frac, dtype=float)
    n_t = vwap_frac.size
    raw = np.empty(n_features(n_t))
    raw[0] = minute / MINUTES
    if prev_price is None:
        raw[1:1 + 2 * n_t] = np.nan
    else:
        raw[1:1 + n_t] = prev_price
        raw[1 + n_t:1 + 2 * n_t] = np.log(np.maximum(prev_volume, VOLUME_FLOOR))
    raw[1 + 2 * n_t:1 + 3 * n_t] = vwap_frac
    raw[1 + 3 * n_t:] = 1.0 - (minute - 1) / MINUTES
    return scaler.transform(raw[None])[0]


def fold_profiles(panel: Panel, train_days, beta: float):
    return np.stack([estimate_volume_profile(panel, i, train_days, beta) for i in range(len(panel.tickers))])


def vwap_fractions(profiles):
    return benchmark_inventories(np.ones(profiles.shape[0]), profiles).vwap_path


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    epochs: int = 10_000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    x0_rule: str = "adv_fraction"
    x0_fraction: float = 0.05
    x0_fixed: float = 1e6
    epsilon: float = 0.006
    beta: float = 0.67
    seed: int = 0
    batch_days: int = 1
    hidden: int = HIDDEN
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if self.x0_rule not in ("adv_fraction", "fixed"):
            raise ConfigError(f"unknown x0 rule {self.x0_rule!r}")
        if self.batch_days < 0:
            raise ConfigError("batch_days must be >= 0 (0 = all days)")

    @property
    def impact(self) -> ImpactParams:
        return ImpactParams(self.epsilon, self.beta)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def initial_inventory(panel: Panel, ticker_idx: int, days, config: TrainConfig) -> float:
    if config.x0_rule == "fixed":
        return float(config.x0_fixed)
    return config.x0_fraction * average_daily_volume(panel, ticker_idx, days)


@dataclass
class FoldData:
    """Everything needed to train or evaluate one ticker on one fold."""

    ticker_idx: int
    x0: float
    scaler: FeatureScaler
    profiles: np.ndarray
    vwap_frac: np.ndarray


def prepare_fold(panel: Panel, train_days, ticker, config: TrainConfig) -> FoldData:
    i = ticker if isinstance(ticker, (int, np.integer)) else panel.ticker_index(ticker)
    train_days = np.asarray(train_days, dtype=int)
    profiles = fold_profiles(panel, train_days, config.beta)
    vfrac = vwap_fractions(profiles)
    raw = raw_features(panel.price[:, train_days], panel.volume[:, train_days], vfrac)
    return FoldData(int(i), initial_inventory(panel, i, train_days, config), FeatureScaler.fit(raw), profiles, vfrac)


def make_episodes(panel: Panel, days, fold: FoldData, impact: ImpactParams, betas=None) -> Episodes:
    days = np.asarray(days, dtype=int)
    raw = raw_features(panel.price[:, days], panel.volume[:, days], fold.vwap_frac)
    coef, power = cost_coefficients(panel.price[fold.ticker_idx, days], panel.volume[fold.ticker_idx, days], impact, betas)
    return Episodes(fold.scaler.transform(raw), coef, power, np.full(days.size, fold.x0))


@dataclass
class TrainResult:
    weights: PolicyWeights
    fold: FoldData
    config: TrainConfig
    curve: list
    adam: AdamState
    epoch: int


def _batches(n, config, epoch):
    order = np.arange(n)
    if config.shuffle:
        order = stream(config.seed, epoch + 1).permutation(n)
    size = n if config.batch_days == 0 else config.batch_days
    return [order[i:i + size] for i in range(0, n, size)]


def train(panel: Panel, train_days, ticker, config: TrainConfig, resume: TrainResult | None = None,
          stop_after: int | None = None, log=None) -> TrainResult:
    """Fit the policy for one ticker on the given training days.

    Days are independent episodes; one Adam update per batch of
    ``config.batch_days`` days (1: one update per day, 0: one per epoch).
    ``resume`` continues a previous run; ``stop_after`` ends early after that
    many total epochs (for checkpointing).
    """
    train_days = np.asarray(train_days, dtype=int)
    if train_days.size == 0:
        raise ConfigError("no training days")
    if resume is None:
        fold = prepare_fold(panel, train_days, ticker, config)
        weights = PolicyWeights.initialize(n_features(len(panel.tickers)), config.hidden, config.seed)
        adam = AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps)
        curve, start = [], 0
    else:
        fold, weights, adam, curve, start = resume.fold, resume.weights, resume.adam, list(resume.curve), resume.epoch
    episodes = make_episodes(panel, train_days, fold, config.impact)

    end = config.epochs if stop_after is None else min(config.epochs, stop_after)
    for epoch in range(start, end):
        total = 0.0
        for idx in _batches(len(episodes), config, epoch):
            try:
                loss, grads = gradient(weights, episodes.subset(idx))
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch + 1}: {exc}") from None
            total += loss
            if len(idx) > 1:
                # batch mode averages the per-day gradients
                grads = {k: g / len(idx) for k, g in grads.items()}
            adam_step(weights, grads, adam, config.lr)
        curve.append((epoch + 1, total / len(episodes)))
        if not weights.all_finite():
            raise NumericalError(f"epoch {epoch + 1}: weights diverged")
        if log is not None:
            log(epoch + 1, total / len(episodes))
    return TrainResult(weights, fold, config, curve, adam, end)


def policy_inventory(result_or_weights, fold: FoldData | None, panel: Panel, days) -> np.ndarray:
    """Inventory paths (n_days, 79) of the trained policy on ``days``."""
    if isinstance(result_or_weights, TrainResult):
        weights, fold = result_or_weights.weights, result_or_weights.fold
    else:
        weights = result_or_weights
    days = np.asarray(days, dtype=int)
    raw = raw_features(panel.price[:, days], panel.volume[:, days], fold.vwap_frac)
    y = forward_sequence(weights, fold.scaler.transform(raw))
    return inventory_from_output(y, fold.x0)


# --------------------------------------------------------------------------
# Checkpoints: magic, u32 version, u32 header length, JSON header, then
# little-endian f64 arrays in the order listed in the header's shape table.


def save_checkpoint(path, result: TrainResult, ticker: str) -> None:
    arrays = [(f"w.{k}", result.weights.params[k]) for k in PARAM_NAMES]
    arrays += [("scaler.mean", result.fold.scaler.mean), ("scaler.std", result.fold.scaler.std)]
    arrays += [("fold.profiles", result.fold.profiles)]
    for k in PARAM_NAMES:
        if k in result.adam.m:
            arrays += [(f"adam.m.{k}", result.adam.m[k]), (f"adam.v.{k}", result.adam.v[k])]
    header = {
        "ticker": ticker,
        "config_hash": result.config.digest(),
        "config": asdict(result.config),
        "epoch": result.epoch,
        "ticker_idx": result.fold.ticker_idx,
        "x0": result.fold.x0,
        "adam_step": result.adam.step,
        "curve": result.curve,
        "shapes": [[name, list(arr.shape)] for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Returns (TrainResult, ticker)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise StructuralError(f"{path}: not a policy checkpoint")
    version, n = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise StructuralError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + n].decode("utf-8"))
    pos = 12 + n
    arrays = {}
    for name, shape in header["shapes"]:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float)
        pos += 8 * size
    config = TrainConfig(**header["config"])
    if config.digest() != header["config_hash"]:
        raise StructuralError(f"{path}: config hash mismatch")
    weights = PolicyWeights({k: arrays[f"w.{k}"] for k in PARAM_NAMES})
    profiles = arrays["fold.profiles"]
    fold = FoldData(header["ticker_idx"], header["x0"], FeatureScaler(arrays["scaler.mean"], arrays["scaler.std"]),
                    profiles, vwap_fractions(profiles))
    adam = AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps, header["adam_step"])
    for k in PARAM_NAMES:
        if f"adam.m.{k}" in arrays:
            adam.m[k] = arrays[f"adam.m.{k}"]
            adam.v[k] = arrays[f"adam.v.{k}"]
    curve = [tuple(c) for c in header["curve"]]
    return TrainResult(weights, fold, config, curve, adam, header["epoch"]), header["ticker"]


# --------------------------------------------------------------------------
# Hand-built weights that replay a prescribed inventory schedule


def replicating_weights(fractions, time_mean: float, time_std: float, n_inputs: int,
                        hidden: int = HIDDEN) -> PolicyWeights:
    """Weights whose head emits ``fractions[n]`` at trade minute 5(n+1).

    ``fractions`` holds the 77 remaining-inventory fractions at minutes
    5..385, each in (0, 1). Only the scaled clock input (column 0, scaled as
    ``(t/390 - time_mean) / time_std``) is used. Saturated gates are exactly
    0 or 1 in double precision, so the construction is:

    * layer 1: one counter unit accumulating a constant per minute and
      step units switching sign at chosen half-minutes;
    * layer 2: one unit whose per-minute increment is piecewise constant
      between the layer-1 steps, plus ramp units that start accumulating a
      constant once the counter passes their threshold;
    * the head sums layer-2 cells in their linear range, producing a
      piecewise-linear logit that hits each target at its trade minute
      (to about 1e-13 in the logit).
    """
    fractions = np.asarray(fractions, dtype=float)
    n_targets = TRADE_MINUTES.size - 1
    if fractions.shape != (n_targets,) or np.any(fractions <= 0) or np.any(fractions >= 1):
        raise ConfigError(f"need {n_targets} fractions strictly inside (0, 1)")
    logit = np.log(fractions) - np.log1p(-fractions)

    h = hidden
    on, off = 60.0, -60.0  # sigmoid(60) == 1.0 and sigmoid(-60) ~ 1e-26
    w = PolicyWeights.zeros(n_inputs, h)
    W1, b1, W2, b2 = w["W1"], w["b1"], w["W2"], w["b2"]
    I, F, G, O = (slice(k * h, (k + 1) * h) for k in range(4))

    # slope of the logit (per minute) on (5n, 5n + 5]; zero before minute 5
    slopes = np.concatenate([[0.0], np.diff(logit) / TRADE_INTERVAL_F])
    boundaries = np.arange(1, n_targets)  # slope changes after minute 5n
    n_steps = min(h - 1, boundaries.size)
    n_ramps = boundaries.size - n_steps
    if n_ramps > h - 1:
        raise ConfigError("hidden layer too small for this schedule")
    step_bounds = boundaries[:n_steps]
    ramp_bounds = boundaries[n_steps:]

    # layer 1, unit 0: counter c = t * clock
    clock = 1e-3
    b1[I][0] = on
    b1[F][0] = on
    b1[O][0] = on
    b1[G][0] = np.arctanh(clock)
    # layer 1, units 1..n_steps: sign switch at minute 5n + 1/2
    half = 0.5 / MINUTES / time_std
    gain = 40.0 / half
    for j, n in enumerate(step_bounds, start=1):
        u_thr = ((TRADE_INTERVAL_F * n + 0.5) / MINUTES - time_mean) / time_std
        W1[0, G.start + j] = gain
        b1[G.start + j] = -gain * u_thr
        b1[I.start + j] = on
        b1[F.start + j] = off
        b1[O.start + j] = on
    s1 = math.tanh(1.0)

    # layer 2, unit 0: per-minute increment tracks the slope between steps
    tiny = 1e-9
    ramp_rate = tiny
    b2[I][0] = on
    b2[F][0] = on
    b2[O][0] = on
    # slope contributed by ramps active at segment n
    ramp_slope = np.zeros(slopes.size)
    ramp_weights = []
    for n in ramp_bounds:
        jump = slopes[n] - slopes[n - 1]
        ramp_weights.append(jump / ramp_rate)
        ramp_slope[n:] += jump
    base = slopes - ramp_slope  # what unit 0 must provide, piecewise constant between steps
    # region r covers segments after the r-th step boundary
    region_vals = [base[0]] + [base[n] for n in step_bounds]
    scale = max(np.max(np.abs(region_vals)), 1e-300)
    z = np.asarray(region_vals) / scale * tiny  # g ~ z in the linear range
    # z_r = b + s1 * (sum_{j<=r} a_j - sum_{j>r} a_j)
    alphas = np.diff(z) / (2.0 * s1)
    W2[1:1 + n_steps, G.start] = alphas
    b2[G.start] = z[0] + s1 * alphas.sum()
    w_unit0 = scale / tiny

    # layer 2, ramp units: start accumulating after their boundary minute
    thr_gain = 50.0 / (0.5 * clock * (1.0 - math.tanh(clock * MINUTES) ** 2))
    w_out = w["w_out"]
    w_out[0] = w_unit0
    for k, (n, wk) in enumerate(zip(ramp_bounds, ramp_weights), start=1):
        thr = math.tanh(clock * (TRADE_INTERVAL_F * n + 0.5))
        W2[0, I.start + k] = thr_gain
        b2[I.start + k] = -thr_gain * thr
        b2[F.start + k] = on
        b2[O.start + k] = on
        b2[G.start + k] = np.arctanh(ramp_rate)
        w_out[k] = wk
    w["b_out"][0] = logit[0]
    return w

