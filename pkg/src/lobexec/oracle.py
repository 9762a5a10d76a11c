"""Numerical checks of the optimality of TWAP and VWAP.

Deterministic setting: minimize sum_t S_t V_t ** (-p) |a_t| ** (1 + p) subject
to sum_t a_t = -x0, with p = 1 / (beta + 1). The first-order condition says
the co-state ``lambda_t = (1 + p) S_t sign(a_t) (|a_t| / V_t) ** p`` is the
same at every t, which gives a_t proportional to V_t when S is constant.

Stochastic setting: with log-normal volumes calibrated so that the power-mean
profile is deterministic, ``M_t = V_t ** (-p) / E[V_t ** (-p)]`` is a
martingale and VWAP remains optimal among adapted policies. Both claims are
checked by Monte Carlo.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, NumericalError
from .impact import ImpactParams
from .market_data import MINUTES, TRADE_MINUTES, SynthSpec, u_shape
from .rng import stream
from .strategies import Schedule, twap_schedule, vwap_schedule

# keys of the oracle's private random streams
_MARTINGALE_KEY = 0x5EED_0001
_POLICY_KEY = 0x5EED_0002


@dataclass(frozen=True, eq=False)
class DeterministicInstance:
    prices: np.ndarray
    volumes: np.ndarray
    x0: float
    beta: float

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.prices, dtype=float))
        v = np.atleast_1d(np.asarray(self.volumes, dtype=float))
        if s.size == 1 and v.size > 1:
            s = np.full(v.size, s[0])
        object.__setattr__(self, "prices", s)
        object.__setattr__(self, "volumes", v)
        if s.ndim != 1 or s.shape != v.shape or s.size < 1:
            raise ConfigError("prices and volumes must be vectors of equal length T >= 1")
        if np.any(s <= 0) or np.any(v <= 0) or not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ConfigError("instance prices and volumes must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.x0 == 0:
            raise ConfigError("x0 must be non-zero")

    @property
    def n_trades(self) -> int:
        return self.prices.size

    @property
    def p(self) -> float:
        return 1.0 / (self.beta + 1.0)

    @property
    def weights(self) -> np.ndarray:
        return self.prices * self.volumes ** (-self.p)


def schedule_cost(actions, instance: DeterministicInstance) -> float:
    a = np.asarray(actions, dtype=float)
    return float(np.sum(instance.weights * np.abs(a) ** (1.0 + instance.p)))


def closed_form_schedule(instance: DeterministicInstance) -> Schedule:
    """Minimizer from the first-order condition: |a_t| proportional to V_t S_t ** -(beta + 1)."""
    shape = instance.volumes * instance.prices ** (-(instance.beta + 1.0))
    return vwap_schedule(instance.x0, shape)


@dataclass
class SolverInfo:
    iterations: int
    projected_gradient: float
    objective: float


def optimal_deterministic_schedule(instance: DeterministicInstance, start=None, tol: float = 1e-10,
                                   max_iter: int = 200_000, info: list | None = None) -> Schedule:
    """Projected gradient on the hyperplane sum(a) = -x0.

    Barzilai-Borwein trial steps with Armijo backtracking. Stops when the
    projected gradient norm drops below ``tol`` times the gradient norm.
    Solved in units of x0 so the scale of the instance does not matter.
    """
    q = 1.0 + instance.p
    w = instance.weights / np.max(instance.weights)
    t_len = instance.n_trades
    u = np.full(t_len, -1.0 / t_len) if start is None else np.asarray(start, dtype=float) / instance.x0
    u = u - (np.sum(u) + 1.0) / t_len

    def f(x):
        return float(np.sum(w * np.abs(x) ** q))

    def grad(x):
        return q * w * np.abs(x) ** (q - 1.0) * np.sign(x)

    fx, g = f(u), grad(u)
    pg = g - np.mean(g)
    step = 1.0 / max(np.max(np.abs(g)), 1e-300)
    for it in range(max_iter):
        gnorm, pnorm = np.linalg.norm(g), np.linalg.norm(pg)
        if pnorm <= tol * gnorm:
            break
        d = -pg
        slope = float(pg @ d)
        while True:
            trial = u + step * d
            trial -= (np.sum(trial) + 1.0) / t_len  # stay on the plane despite rounding
            ft = f(trial)
            g_new = grad(trial)
            pg_new = g_new - np.mean(g_new)
            if ft <= fx + 1e-4 * step * slope or step < 1e-300:
                break
            # near the optimum the decrease drops below the rounding of f;
            # fall back to requiring a smaller projected gradient
            if abs(ft - fx) <= 1e-14 * abs(fx) and np.linalg.norm(pg_new) < pnorm:
                break
            step *= 0.5
        s, y = trial - u, pg_new - pg
        sy = float(s @ y)
        u, fx, g, pg = trial, ft, g_new, pg_new
        step = float(s @ s) / sy if sy > 0 else step * 2.0
    else:
        raise NumericalError(
            f"projected gradient did not converge in {max_iter} iterations "
            f"(relative projected gradient {np.linalg.norm(pg) / np.linalg.norm(g):.3e})"
        )
    if info is not None:
        info.append(SolverInfo(it, float(np.linalg.norm(pg) / np.linalg.norm(g)), fx))
    return Schedule(u * instance.x0, float(instance.x0))


@dataclass
class CostateResult:
    residual: float
    lambdas: np.ndarray
    undefined: tuple = ()


def costate_residual(schedule, instance: DeterministicInstance) -> CostateResult:
    """max_t |lambda_t - lambda_{t+1}| / |lambda_0| along the schedule.

    Trades with a_t = 0 have no usable co-state; they are listed in
    ``undefined`` and skipped.
    """
    a = schedule.actions if isinstance(schedule, Schedule) else np.asarray(schedule, dtype=float)
    if a.size != instance.n_trades:
        raise ConfigError("schedule and instance lengths differ")
    p = instance.p
    lam = (1.0 + p) * np.sign(a) * instance.prices * (np.abs(a) / instance.volumes) ** p
    ok = a != 0
    undefined = tuple(int(t) for t in np.flatnonzero(~ok))
    defined = lam[ok]
    if defined.size == 0:
        return CostateResult(math.nan, lam, undefined)
    if defined.size == 1:
        return CostateResult(0.0, lam, undefined)
    residual = float(np.max(np.abs(np.diff(defined))) / abs(defined[0]))
    return CostateResult(residual, lam, undefined)


# --------------------------------------------------------------------------
# Stochastic volumes


@dataclass
class MartingaleStats:
    """Binned conditional means of M_{t+1} / M_t at consecutive trade minutes."""

    n_paths: int
    n_bins: int
    minutes: np.ndarray
    ratio: np.ndarray   # (n_steps, n_bins) conditional mean
    se: np.ndarray      # (n_steps, n_bins) standard error
    count: np.ndarray   # (n_steps, n_bins)
    max_abs_z: float
    max_abs_dev: float
    warnings: list = field(default_factory=list)


def _volume_moments(spec: SynthSpec):
    """Mean and variance of log V at minutes 0..390 for a ticker at ``spec.volume_level``."""
    vs, _ = spec.sigmas()
    drift = spec.log_volume_drift()
    m = np.log(spec.volume_level * spec.shape()[0]) + np.concatenate([[0.0], np.cumsum(drift)])
    var = np.concatenate([[0.0], np.cumsum(vs**2)])
    return m, var


def _simulate_log_volume_paths(spec: SynthSpec, n: int, gen) -> np.ndarray:
    """(n, 391) log volumes at minutes 0..390 for one ticker at ``spec.volume_level``.

    Accumulated exactly as in ``_volume_moments`` so that zero volatility
    reproduces the mean path bit for bit.
    """
    vs, _ = spec.sigmas()
    z = gen.standard_normal((n, MINUTES))
    log_v0 = np.log(spec.volume_level * spec.shape()[0])
    logv = np.empty((n, MINUTES + 1))
    logv[:, 0] = log_v0
    logv[:, 1:] = log_v0 + np.cumsum(spec.log_volume_drift() + vs * z, axis=1)
    return logv


def check_prop2_martingale(spec: SynthSpec, n_paths: int = 100_000, n_bins: int = 20,
                           chunk: int = 10_000, seed: int = 0) -> MartingaleStats:
    """Monte-Carlo test that E[M_{t+1} | M_t] = M_t at the trade minutes.

    Paths are binned by the quantile of M_t, using the exact log-normal law
    of V_t for the bin edges so chunks can be accumulated independently.
    """
    if n_paths < 1000:
        warns = [f"only {n_paths} paths; statistical power is low"]
    else:
        warns = []
    p = 1.0 / (spec.calib_beta + 1.0)
    mean, var = _volume_moments(spec)
    minutes = np.concatenate([[0], TRADE_MINUTES])
    n_steps = minutes.size - 1
    edges = norm.ppf(np.arange(1, n_bins) / n_bins)
    s1 = np.zeros((n_steps, n_bins))
    s2 = np.zeros((n_steps, n_bins))
    cnt = np.zeros((n_steps, n_bins))
    gen = stream(_MARTINGALE_KEY + seed, spec.seed)
    done = 0
    while done < n_paths:
        n = min(chunk, n_paths - done)
        logv = _simulate_log_volume_paths(spec, n, gen)[:, minutes]
        # V_t ** -p over its log-normal expectation
        dev_log = logv - mean[minutes]
        m = np.exp(-p * dev_log - 0.5 * p * p * var[minutes])
        r = m[:, 1:] / m[:, :-1]
        sd = np.sqrt(var[minutes[:-1]])
        with np.errstate(divide="ignore", invalid="ignore"):
            zt = np.where(sd > 0, dev_log[:, :-1] / sd, 0.0)
        b = np.searchsorted(edges, zt)
        b[:, sd == 0] = 0
        for k in range(n_steps):
            s1[k] += np.bincount(b[:, k], r[:, k], n_bins)
            s2[k] += np.bincount(b[:, k], r[:, k] ** 2, n_bins)
            cnt[k] += np.bincount(b[:, k], None, n_bins)
        done += n
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = s1 / cnt
        var_r = np.maximum(s2 / cnt - ratio**2, 0.0) * cnt / np.maximum(cnt - 1, 1)
        se = np.sqrt(var_r / cnt)
        dev = np.abs(ratio - 1.0)
        z = np.where(se > 0, dev / se, np.where(dev > 1e-12, np.inf, 0.0))
    used = cnt > 1
    if np.any((cnt > 0) & (cnt < 30)):
        warns.append("some bins hold fewer than 30 paths")
    return MartingaleStats(n_paths, n_bins, minutes, ratio, se, cnt,
                           float(np.max(z[used])) if np.any(used) else 0.0,
                           float(np.max(dev[used])) if np.any(used) else 0.0, warns)


@dataclass
class PolicyComparison:
    vwap_cost: float
    policy_costs: np.ndarray   # mean cost per perturbed policy
    mean_diff: np.ndarray      # mean(policy - VWAP), paired
    se_diff: np.ndarray
    n_paths: int

    @property
    def min_z(self) -> float:
        """Smallest (policy - VWAP) / SE; below -3 would contradict optimality."""
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.se_diff > 0, self.mean_diff / self.se_diff, np.where(self.mean_diff < 0, -np.inf, np.inf))
        return float(np.min(z))


def _perturbed_costs(v, s, coef, q, x0, base_frac, kappa, alpha, sign, noise, u_prev):
    """Cost of an adapted policy trading fraction base_frac*(1 + kappa*xi) of what is left."""
    n, t_len = v.shape
    x = np.full(n, x0)
    cost = np.zeros(n)
    for ell in range(t_len):
        if ell == t_len - 1:
            a = -x
        else:
            xi = alpha * noise[:, ell] + (1.0 - alpha) * sign * np.tanh(u_prev[:, ell])
            frac = np.clip(base_frac[ell] * (1.0 + kappa * xi), 0.0, 1.0)
            a = -x * frac
        cost += coef * s[:, ell] * v[:, ell] ** (-(q - 1.0)) * np.abs(a) ** q
        x = x + a
    return cost


def compare_vwap_policies(spec: SynthSpec, n_paths: int = 10_000, n_policies: int = 100,
                          x0: float = 1e6, epsilon: float = 0.003, seed: int = 0) -> PolicyComparison:
    """VWAP against randomly perturbed adapted policies on common paths.

    A perturbed policy trades at trade l the VWAP fraction of remaining
    inventory scaled by (1 + kappa * xi_l), where xi_l mixes fresh noise with
    the last observed volume surprise (known before the trade). The final
    trade closes the position.
    """
    impact = ImpactParams(epsilon, spec.calib_beta)
    q = impact.cost_exponent
    gen = stream(_POLICY_KEY + seed, spec.seed)
    log_v_all = _simulate_log_volume_paths(spec, n_paths, gen)
    v_all = np.exp(log_v_all)
    _, ps = spec.sigmas()
    zp = gen.standard_normal((n_paths, MINUTES))
    s_all = spec.price_level * np.exp(np.cumsum(ps * zp - 0.5 * ps**2, axis=1))
    v = v_all[:, TRADE_MINUTES]
    s = s_all[:, TRADE_MINUTES - 1]
    mean, var = _volume_moments(spec)
    # volume surprise at the previous trade minute; zero before the first trade
    prev = np.concatenate([[0], TRADE_MINUTES[:-1]])
    sd = np.sqrt(var[prev])
    with np.errstate(divide="ignore", invalid="ignore"):
        u_prev = np.where(sd > 0, (log_v_all[:, prev] - mean[prev]) / sd, 0.0)

    profile = spec.volume_level * spec.shape()[TRADE_MINUTES]
    sched = vwap_schedule(x0, profile)
    remaining = np.cumsum(profile[::-1])[::-1]
    base_frac = profile / remaining
    vwap = (impact.c_coeff * s * v ** (-(q - 1.0)) * np.abs(sched.actions) ** q).sum(axis=1)

    pol_gen = stream(_POLICY_KEY + seed, 1_000_000 + spec.seed)
    means, diffs, ses = [], [], []
    for _ in range(n_policies):
        kappa = pol_gen.uniform(0.05, 0.5)
        alpha = pol_gen.uniform(0.0, 1.0)
        sign = pol_gen.choice([-1.0, 1.0])
        noise = np.clip(pol_gen.standard_normal((n_paths, TRADE_MINUTES.size)), -3.0, 3.0)
        cost = _perturbed_costs(v, s, impact.c_coeff, q, x0, base_frac, kappa, alpha, sign, noise, u_prev)
        d = cost - vwap
        means.append(cost.mean())
        diffs.append(d.mean())
        ses.append(d.std(ddof=1) / math.sqrt(n_paths))
    return PolicyComparison(float(vwap.mean()), np.array(means), np.array(diffs), np.array(ses), n_paths)


# --------------------------------------------------------------------------
# Report


def u_shaped_instance(n_trades: int, beta: float, x0: float = 1.0, price: float = 1.0) -> DeterministicInstance:
    vol = u_shape(n_trades)[1:] if n_trades > 1 else np.ones(1)
    return DeterministicInstance(np.full(n_trades, price), vol, x0, beta)


def prop1_grid(betas=(0.0, 0.5, 0.67, 1.0, 2.0), lengths=(2, 4, 78), tol: float = 1e-6) -> list:
    """Solver vs closed form on constant-price instances (U-shaped and flat volume)."""
    out = []
    for beta in betas:
        for t_len in lengths:
            for kind in ("u_shape", "flat"):
                if kind == "flat":
                    inst = DeterministicInstance(np.ones(t_len), np.full(t_len, 3.0), 1.0, beta)
                    ref = twap_schedule(1.0, t_len)
                else:
                    inst = u_shaped_instance(t_len, beta)
                    ref = vwap_schedule(1.0, inst.volumes)
                sol = optimal_deterministic_schedule(inst)
                err = float(np.max(np.abs(sol.actions - ref.actions) / np.abs(ref.actions)))
                res = costate_residual(ref, inst).residual
                out.append({"beta": beta, "T": t_len, "volume": kind, "max_rel_error": err,
                            "costate_residual": res, "pass": bool(err < tol and res < 1e-8)})
    return out


def verification_report(spec: SynthSpec | None = None, n_paths: int = 100_000, n_policy_paths: int = 10_000,
                        n_policies: int = 100, seed: int = 0) -> dict:
    """All oracle checks as a JSON-ready dict with pass/fail flags."""
    spec = spec or SynthSpec(n_tickers=1)
    grid = prop1_grid()
    inst = u_shaped_instance(78, 0.67)
    twap_res = costate_residual(twap_schedule(1.0), inst).residual
    vwap_res = costate_residual(vwap_schedule(1.0, inst.volumes), inst).residual
    grid_pass = all(r["pass"] for r in grid)
    mart = check_prop2_martingale(spec, n_paths, seed=seed)
    comp = compare_vwap_policies(spec, n_policy_paths, n_policies, seed=seed)
    checks = {
        "prop1_solver_matches_closed_form": grid_pass,
        "vwap_costate_residual_below_1e-8": vwap_res < 1e-8,
        "twap_costate_residual_above_1e-3": twap_res > 1e-3,
        "martingale_within_5_se": mart.max_abs_z < 5.0,
        "vwap_lowest_within_3_se": comp.min_z > -3.0,
    }
    return {
        "checks": checks,
        "pass": all(checks.values()),
        "prop1_grid": grid,
        "costate": {"vwap_residual": vwap_res, "twap_residual": twap_res},
        "martingale": {"n_paths": mart.n_paths, "n_bins": mart.n_bins, "max_abs_z": mart.max_abs_z,
                       "max_abs_dev": mart.max_abs_dev, "warnings": mart.warnings},
        "policies": {"n_paths": comp.n_paths, "n_policies": len(comp.policy_costs), "vwap_cost": comp.vwap_cost,
                     "min_z": comp.min_z, "min_mean_diff": float(np.min(comp.mean_diff))},
    }


def write_verification_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
