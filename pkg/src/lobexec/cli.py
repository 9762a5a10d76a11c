"""Command-line front end.

    lobexec [--config PATH] [--set section.key=value ...] COMMAND ...

The configuration is an INI file; ``LOBEXEC_CONFIG`` names the default.
Every command echoes the effective configuration into the output directory.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import pathlib
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import backtest, market_data, oracle, policy_net
from .errors import ConfigError, DataError, LobexecError, NumericalError
from .impact import BetaNoiseSpec, ImpactParams

ENV_CONFIG = "LOBEXEC_CONFIG"

DEFAULT_CONFIG = """\
[data]
source = synth
cache = panel.exsp

[synth]
n_tickers = 5
n_days = 105
seed = 0

[folds]
n_folds = 1
train_days = 60
test_days = 45

[train]
epochs = 200
lr = 0.01
batch_days = 0
seed = 0

[output]
dir = run
format = csv
"""


@dataclass(frozen=True)
class Scenario:
    name: str
    epsilon: float
    x0_rule: str
    beta_modes: tuple = ("fixed",)


@dataclass
class RunConfig:
    source: str
    csv_path: str | None
    cache: str
    synth: market_data.SynthSpec | None
    n_folds: int
    train_days: int
    test_days: int
    train: policy_net.TrainConfig
    scenarios: list
    noise: BetaNoiseSpec
    out_dir: pathlib.Path
    fmt: str
    tickers: tuple | None
    folds: tuple | None
    strategies: tuple
    verify: dict = field(default_factory=dict)
    text: str = ""

    def train_config(self, scenario: Scenario) -> policy_net.TrainConfig:
        return replace(self.train, epsilon=scenario.epsilon, x0_rule=scenario.x0_rule)


def _get(cp, section, key, conv=str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _list(raw):
    if raw is None or raw.strip().lower() in ("", "all"):
        return None
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def read_config(path=None, overrides=()) -> RunConfig:
    """Parse the configuration file and apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if path is None:
            cp.read_string(DEFAULT_CONFIG)
        else:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"bad config: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().rpartition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, option, value.strip())

    source = _get(cp, "data", "source", str, None)
    has_csv = cp.has_option("data", "csv")
    if source is None:
        source = "csv" if has_csv else ("synth" if cp.has_section("synth") else None)
    if source not in ("csv", "synth"):
        raise ConfigError("exactly one data source is required: [data] source = csv | synth")
    if source == "csv" and not has_csv:
        raise ConfigError("[data] source = csv needs [data] csv = PATH")
    if source == "synth" and has_csv:
        raise ConfigError("both a csv path and a synthetic source are configured; pick one")
    synth = None
    if source == "synth":
        kw = {}
        for name, conv in (("n_tickers", int), ("n_days", int), ("seed", int), ("price_level", float),
                           ("volume_level", float), ("level_spread", float), ("vol_sigma", float),
                           ("price_sigma", float), ("correlation", float), ("u_shape", bool),
                           ("open_amp", float), ("close_amp", float), ("calib_beta", float),
                           ("start_date", str)):
            v = _get(cp, "synth", name, conv)
            if v is not None:
                kw[name] = v
        synth = market_data.SynthSpec(**kw)

    tkw = {}
    for name, conv in (("epochs", int), ("lr", float), ("adam_beta1", float), ("adam_beta2", float),
                       ("adam_eps", float), ("x0_rule", str), ("x0_fraction", float), ("x0_fixed", float),
                       ("epsilon", float), ("beta", float), ("seed", int), ("batch_days", int),
                       ("hidden", int), ("shuffle", bool)):
        v = _get(cp, "train", name, conv)
        if v is not None:
            tkw[name] = v
    train = policy_net.TrainConfig(**tkw)

    scenarios = []
    for sec in cp.sections():
        if not sec.startswith("scenario."):
            continue
        name = sec.split(".", 1)[1].strip()
        if not name or "/" in name:
            raise ConfigError(f"bad scenario name in [{sec}]")
        modes = _list(_get(cp, sec, "beta", str, "fixed")) or ("fixed",)
        if any(m not in ("fixed", "noisy") for m in modes):
            raise ConfigError(f"[{sec}] beta must list fixed and/or noisy")
        scenarios.append(Scenario(name, _get(cp, sec, "epsilon", float, train.epsilon),
                                  _get(cp, sec, "x0_rule", str, train.x0_rule), modes))
    if not scenarios:
        scenarios = [Scenario("base", train.epsilon, train.x0_rule)]
    names = [s.name for s in scenarios]
    if len(set(n.lower() for n in names)) != len(names):
        raise ConfigError(f"scenario names must be unique: {names}")
    for s in scenarios:
        ImpactParams(s.epsilon, train.beta)
        if s.x0_rule not in ("adv_fraction", "fixed"):
            raise ConfigError(f"scenario {s.name}: unknown x0 rule {s.x0_rule!r}")

    noise = BetaNoiseSpec(train.beta, _get(cp, "noise", "half_width", float, 0.3), _get(cp, "noise", "seed", int, 0))
    strategies = _list(_get(cp, "backtest", "strategies", str, None)) or backtest.STRATEGIES
    if set(strategies) - set(backtest.STRATEGIES):
        raise ConfigError(f"unknown strategies in {strategies}")
    fmt = _get(cp, "output", "format", str, "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"[output] format must be csv or json, got {fmt!r}")
    folds = _list(_get(cp, "train", "folds", str, None))
    verify = {
        "n_paths": _get(cp, "verify", "n_paths", int, 100_000),
        "n_policy_paths": _get(cp, "verify", "n_policy_paths", int, 10_000),
        "n_policies": _get(cp, "verify", "n_policies", int, 100),
        "seed": _get(cp, "verify", "seed", int, 0),
    }
    buf = io.StringIO()
    cp.write(buf)
    return RunConfig(
        source=source,
        csv_path=_get(cp, "data", "csv", str, None),
        cache=_get(cp, "data", "cache", str, "panel.exsp"),
        synth=synth,
        n_folds=_get(cp, "folds", "n_folds", int, 9),
        train_days=_get(cp, "folds", "train_days", int, 60),
        test_days=_get(cp, "folds", "test_days", int, 45),
        train=train,
        scenarios=scenarios,
        noise=noise,
        out_dir=pathlib.Path(_get(cp, "output", "dir", str, "run")),
        fmt=fmt,
        tickers=_list(_get(cp, "train", "tickers", str, None)),
        folds=None if folds is None else tuple(int(f) for f in folds),
        strategies=tuple(strategies),
        verify=verify,
        text=buf.getvalue(),
    )


# --------------------------------------------------------------------------
# helpers


def _echo_config(cfg: RunConfig) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "config.ini").write_text(cfg.text, encoding="utf-8")


def _cache_path(cfg: RunConfig) -> pathlib.Path:
    p = pathlib.Path(cfg.cache)
    return p if p.is_absolute() else cfg.out_dir / p


def load_panel(cfg: RunConfig) -> market_data.Panel:
    cache = _cache_path(cfg)
    if cache.exists():
        return market_data.read_cache(cache)
    if cfg.source == "synth":
        return market_data.synth_generate(cfg.synth)
    with open(cfg.csv_path, encoding="utf-8", newline="") as fh:
        return market_data.parse_panel(fh)


def _folds(cfg: RunConfig, panel) -> list:
    folds = market_data.build_folds(panel, cfg.n_folds, cfg.train_days, cfg.test_days)
    if cfg.folds is None:
        return folds
    for k in cfg.folds:
        if not 0 <= k < len(folds):
            raise ConfigError(f"fold {k} out of range 0..{len(folds) - 1}")
    return [folds[k] for k in cfg.folds]


def _tickers(cfg: RunConfig, panel) -> list:
    if cfg.tickers is None:
        return list(panel.tickers)
    for t in cfg.tickers:
        panel.ticker_index(t)
    return list(cfg.tickers)


def checkpoint_path(cfg: RunConfig, scenario: str, ticker: str, fold: int) -> pathlib.Path:
    return cfg.out_dir / "checkpoints" / scenario / f"{ticker}_fold{fold}.expw"


def _write_curve(path, curve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_train_loss"])
        for epoch, loss in curve:
            w.writerow([epoch, format(loss, ".17g")])


def _train_one(args):
    cfg, panel, scenario, ticker, fold, resume = args
    tc = cfg.train_config(scenario)
    ck = checkpoint_path(cfg, scenario.name, ticker, fold.index)
    previous = None
    if resume and ck.exists():
        previous, _ = policy_net.load_checkpoint(ck)
        if previous.config.digest() != tc.digest():
            raise ConfigError(f"{ck}: checkpoint was trained with a different configuration")
    result = policy_net.train(panel, fold.train_days, ticker, tc, resume=previous)
    ck.parent.mkdir(parents=True, exist_ok=True)
    policy_net.save_checkpoint(ck, result, ticker)
    _write_curve(ck.with_suffix(".curve.csv"), result.curve)
    return str(ck), result.curve[-1][1] if result.curve else float("nan")


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))  # results come back in submission order


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args, cfg: RunConfig | None) -> int:
    src = args.csv or (cfg.csv_path if cfg else None)
    if not src:
        raise ConfigError("ingest needs a csv path")
    dest = pathlib.Path(args.cache) if args.cache else (_cache_path(cfg) if cfg else None)
    if dest is None:
        raise ConfigError("ingest needs a cache path")
    try:
        with open(src, encoding="utf-8", newline="") as fh:
            panel = market_data.parse_panel(fh)
    except FileNotFoundError:
        raise DataError(f"no such file: {src}") from None
    dest.parent.mkdir(parents=True, exist_ok=True)
    market_data.write_cache(panel, dest)
    if cfg is not None:
        _echo_config(cfg)
    print(f"{len(panel.tickers)} tickers x {len(panel.days)} days -> {dest}")
    for t in panel.tickers:
        print(f"  {t}: {panel.fill_counts.get(t, 0)} missing minutes filled")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    if cfg.source != "synth":
        raise ConfigError("synth needs [data] source = synth")
    panel = market_data.synth_generate(cfg.synth)
    dest = pathlib.Path(args.out) if args.out else _cache_path(cfg)
    dest.parent.mkdir(parents=True, exist_ok=True)
    market_data.write_cache(panel, dest)
    _echo_config(cfg)
    folds = market_data.build_folds(panel, cfg.n_folds, cfg.train_days, cfg.test_days)
    print(f"synthetic panel {len(panel.tickers)} x {len(panel.days)} -> {dest}")
    for f in folds:
        print("  " + f.describe(panel.days))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    panel = load_panel(cfg)
    _echo_config(cfg)
    items = [(cfg, panel, sc, t, f, args.resume)
             for sc in cfg.scenarios for f in _folds(cfg, panel) for t in _tickers(cfg, panel)]
    for path, loss in _map(_train_one, items, args.jobs):
        print(f"{path}: final mean train loss {loss:.6g}")
    return 0


def _eval_one(args):
    cfg, panel, scenario, fold, mode = args
    tc = cfg.train_config(scenario)
    policies = {}
    if "lstm" in cfg.strategies:
        for t in _tickers(cfg, panel):
            ck = checkpoint_path(cfg, scenario.name, t, fold.index)
            if not ck.exists():
                raise ConfigError(f"missing checkpoint {ck}; run train first or drop lstm from [backtest] strategies")
            policies[t], _ = policy_net.load_checkpoint(ck)
    noise = cfg.noise if mode == "noisy" else None
    return backtest.evaluate_fold(panel, fold, tc, policies, _tickers(cfg, panel), cfg.strategies, noise,
                                  scenario=scenario.name)


def cmd_backtest(args, cfg: RunConfig) -> int:
    panel = load_panel(cfg)
    _echo_config(cfg)
    out = cfg.out_dir / "backtest"
    out.mkdir(parents=True, exist_ok=True)
    folds = _folds(cfg, panel)
    for sc in cfg.scenarios:
        for mode in sc.beta_modes:
            reports = _map(_eval_one, [(cfg, panel, sc, f, mode) for f in folds], args.jobs)
            report = backtest.merge_reports(reports)
            paths = backtest.emit_report(report, out, cfg.fmt, stem=f"{sc.name}_{mode}")
            print(f"{sc.name} ({mode} beta): " + ", ".join(str(p) for p in paths))
    return 0


def cmd_verify(args, cfg: RunConfig) -> int:
    _echo_config(cfg)
    spec = replace(cfg.synth, n_tickers=1) if cfg.synth is not None else market_data.SynthSpec(n_tickers=1)
    rep = oracle.verification_report(spec, **cfg.verify)
    path = cfg.out_dir / "verify.json"
    oracle.write_verification_report(rep, path)
    for name, ok in rep["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"report -> {path}")
    if not rep["pass"]:
        raise NumericalError("verification failed")
    return 0


SUMMARY_COLUMNS = ("scenario", "beta", "strategy", "n_entries", "total_mean_cost", "mean_bps",
                   "total_savings", "mean_savings_bps")


def cmd_report(args, cfg: RunConfig) -> int:
    """Aggregate the backtest tables into one summary per scenario, beta mode and strategy."""
    src = cfg.out_dir / "backtest"
    rows_out = []
    for sc in cfg.scenarios:
        for mode in sc.beta_modes:
            path = src / f"{sc.name}_{mode}.{cfg.fmt}"
            if not path.exists():
                raise ConfigError(f"missing backtest output {path}; run backtest first")
            rows = backtest.parse_report(path)
            for strat in backtest.STRATEGIES:
                sel = [r for r in rows if r["strategy"] == strat]
                if not sel:
                    continue
                sav = [r["savings"] for r in sel if r["savings"] is not None]
                sav_bps = [r["savings_bps"] for r in sel if r["savings_bps"] is not None]
                rows_out.append((sc.name, mode, strat, len(sel),
                                 float(np.sum([r["mean_cost"] for r in sel])),
                                 float(np.mean([r["strategy_bps"] for r in sel])),
                                 float(np.sum(sav)) if sav else None,
                                 float(np.mean(sav_bps)) if sav_bps else None))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows_out:
        w.writerow([backtest._fmt(v) for v in r])
    path = cfg.out_dir / "summary.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    _echo_config(cfg)
    for r in rows_out:
        extra = "" if r[6] is None else f"  savings {r[6]:.2f} $ ({r[7]:.4f} bps)"
        print(f"{r[0]:>10} {r[1]:>6} {r[2]:>5}: cost {r[4]:.2f} $, {r[5]:.4f} bps{extra}")
    print(f"summary -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lobexec", description="Execution backtests under a power-law order book.")
    ap.add_argument("--config", help=f"INI configuration (default: ${ENV_CONFIG}, else built-in defaults)")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a configuration key (repeatable)")
    ap.add_argument("--out", dest="out_dir", help="output directory (overrides [output] dir)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for (ticker, fold) items")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", help="parse a minute-bar CSV into the binary panel cache")
    p.add_argument("csv", nargs="?")
    p.add_argument("cache", nargs="?")
    p = sub.add_parser("synth", help="generate the synthetic panel cache")
    p.add_argument("--cache-out", dest="out")
    p = sub.add_parser("train", help="train one policy per (scenario, fold, ticker)")
    p.add_argument("--tickers", help="comma list (overrides [train] tickers)")
    p.add_argument("--folds", help="comma list of fold indices (overrides [train] folds)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from existing checkpoints")
    p = sub.add_parser("backtest", help="evaluate strategies on the test folds")
    p.add_argument("--strategies", help="comma list of twap, vwap, lstm")
    sub.add_parser("verify", help="run the optimality oracles and write verify.json")
    sub.add_parser("report", help="summarize backtest outputs")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    overrides = list(args.set)
    if args.out_dir:
        overrides.append(f"output.dir={args.out_dir}")
    for flag, key in (("tickers", "train.tickers"), ("folds", "train.folds"), ("epochs", "train.epochs"),
                      ("strategies", "backtest.strategies")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    handlers = {"ingest": cmd_ingest, "synth": cmd_synth, "train": cmd_train, "backtest": cmd_backtest,
                "verify": cmd_verify, "report": cmd_report}
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        path = args.config or os.environ.get(ENV_CONFIG) or None
        if args.command == "ingest" and path is None and not overrides:
            cfg = None
        else:
            cfg = read_config(path, overrides)
        return handlers[args.command](args, cfg)
    except LobexecError as exc:
        print(f"lobexec: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"lobexec: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
