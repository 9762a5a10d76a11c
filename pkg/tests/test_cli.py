import csv

import numpy as np
import pytest

from lobexec import cli
from lobexec.market_data import SynthSpec, read_cache, synth_generate, write_csv
from lobexec.policy_net import PolicyWeights, load_checkpoint, n_features

TINY = """\
[data]
source = synth
cache = panel.exsp

[synth]
n_tickers = 2
n_days = 8
seed = 3

[folds]
n_folds = 1
train_days = 5
test_days = 3

[train]
epochs = 2
lr = 0.01
hidden = 4
batch_days = 0
seed = 1

[scenario.low]
epsilon = 0.003
x0_rule = fixed
beta = fixed, noisy

[verify]
n_paths = 2000
n_policy_paths = 500
n_policies = 3

[output]
dir = {out}
format = csv
"""


@pytest.fixture
def fixture_csv(tmp_path):
    panel = synth_generate(SynthSpec(n_tickers=2, n_days=3, seed=1))
    path = tmp_path / "bars.csv"
    write_csv(panel, path)
    return path, panel


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(out=tmp_path / "run"))
    return path


def test_ingest_fixture(fixture_csv, tmp_path, capsys):
    path, panel = fixture_csv
    cache = tmp_path / "p.exsp"
    assert cli.main(["ingest", str(path), str(cache)]) == 0
    assert read_cache(cache) == panel
    first = cache.read_bytes()
    assert cli.main(["ingest", str(path), str(cache)]) == 0
    assert cache.read_bytes() == first
    assert "2 tickers x 3 days" in capsys.readouterr().out


def test_ingest_malformed_row(fixture_csv, tmp_path, capsys):
    path, _ = fixture_csv
    lines = path.read_text().splitlines()
    lines[6] = lines[6].replace(",", ";", 1)
    path.write_text("\n".join(lines) + "\n")
    assert cli.main(["ingest", str(path), str(tmp_path / "x.exsp")]) == 3
    assert "line 7" in capsys.readouterr().err


def test_ingest_missing_file(tmp_path):
    assert cli.main(["ingest", str(tmp_path / "nope.csv"), str(tmp_path / "x.exsp")]) == 3


def test_synth_deterministic(tiny_config, tmp_path):
    a, b = tmp_path / "a.exsp", tmp_path / "b.exsp"
    assert cli.main(["--config", str(tiny_config), "synth", "--cache-out", str(a)]) == 0
    assert cli.main(["--config", str(tiny_config), "synth", "--cache-out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "run" / "config.ini").exists()


def test_synth_105_days_one_fold(tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["--out", str(out), "--set", "synth.n_tickers=1", "synth"]) == 0
    assert "fold 1:" in capsys.readouterr().out
    assert len(read_cache(out / "panel.exsp").days) == 105
    assert cli.main(["--out", str(out), "--set", "synth.n_tickers=1", "--set", "folds.n_folds=2", "synth"]) == 2


def test_twap_only_backtest_needs_no_checkpoint(tiny_config, tmp_path):
    assert cli.main(["--config", str(tiny_config), "backtest", "--strategies", "twap"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "backtest" / "low_fixed.csv")))
    assert {r["strategy"] for r in rows} == {"twap"}
    assert (tmp_path / "run" / "backtest" / "low_noisy.csv").exists()


def test_backtest_without_checkpoint_fails(tiny_config):
    assert cli.main(["--config", str(tiny_config), "backtest"]) == 2


def test_train_lr_zero_checkpoint_is_init(tiny_config, tmp_path):
    assert cli.main(["--config", str(tiny_config), "--set", "train.lr=0", "train", "--epochs", "1",
                     "--tickers", "SYN01"]) == 0
    res, ticker = load_checkpoint(tmp_path / "run" / "checkpoints" / "low" / "SYN01_fold0.expw")
    assert ticker == "SYN01"
    assert res.weights == PolicyWeights.initialize(n_features(2), 4, seed=1)


def test_pipeline_and_report(tiny_config, tmp_path, capsys):
    cfg = ["--config", str(tiny_config)]
    assert cli.main(cfg + ["synth"]) == 0
    assert cli.main(cfg + ["train"]) == 0
    curve = tmp_path / "run" / "checkpoints" / "low" / "SYN00_fold0.curve.csv"
    assert curve.read_text().splitlines()[0] == "epoch,mean_train_loss"
    assert cli.main(cfg + ["train", "--resume", "--epochs", "3"]) == 2  # config hash changed
    assert cli.main(cfg + ["backtest"]) == 0
    assert cli.main(cfg + ["report"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "summary.csv")))
    assert {(r["beta"], r["strategy"]) for r in rows} == {(m, s) for m in ("fixed", "noisy")
                                                          for s in ("twap", "vwap", "lstm")}
    lstm = [r for r in rows if r["strategy"] == "lstm"]
    assert all(float(r["total_savings"]) == 0.0 for r in lstm)


def test_report_without_backtest(tiny_config):
    assert cli.main(["--config", str(tiny_config), "report"]) == 2


def test_verify(tiny_config, tmp_path):
    code = cli.main(["--config", str(tiny_config), "verify"])
    assert code in (0, 4)
    assert (tmp_path / "run" / "verify.json").exists()


def test_config_errors(tmp_path, capsys):
    assert cli.main(["--config", str(tmp_path / "missing.ini"), "synth"]) == 2
    assert cli.main(["--set", "data.csv=x.csv", "synth"]) == 2
    assert cli.main(["--set", "train.lr=abc", "synth"]) == 2
    assert cli.main(["--set", "nodot=3", "synth"]) == 2
    assert cli.main(["--set", "scenario.a.epsilon=-1", "synth"]) == 2
    assert cli.main(["--jobs", "0", "synth"]) == 2
    assert "error" in capsys.readouterr().err


def test_env_config(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_CONFIG, str(tiny_config))
    assert cli.main(["synth"]) == 0
    assert len(read_cache(tmp_path / "run" / "panel.exsp").tickers) == 2


def test_read_config_scenarios(tiny_config):
    cfg = cli.read_config(tiny_config)
    (sc,) = cfg.scenarios
    assert sc.name == "low" and sc.beta_modes == ("fixed", "noisy") and sc.x0_rule == "fixed"
    assert cfg.train_config(sc).epsilon == 0.003
    assert np.isclose(cfg.noise.half_width, 0.3)
