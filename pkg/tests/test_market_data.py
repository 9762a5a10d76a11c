import io
import math

import numpy as np
import pytest

from lobexec.errors import ConfigError, DegenerateVolumeError, ParseError, StructuralError
from lobexec.market_data import (
    MINUTES,
    SynthSpec,
    average_daily_volume,
    build_folds,
    estimate_volume_profile,
    panel_to_csv_text,
    parse_panel,
    power_mean_volume,
    read_cache,
    synth_generate,
    twap_price,
    vwap_price,
    write_cache,
)


def _csv(rows):
    lines = ["date,minute,ticker,price,volume"]
    lines += [",".join(str(x) for x in r) for r in rows]
    return io.StringIO("\n".join(lines) + "\n")


def _day(date, ticker, price=10.0, volume=100.0):
    return [(date, m, ticker, price, volume) for m in range(1, MINUTES + 1)]


def test_parse_single_ticker_day():
    panel = parse_panel(_csv(_day("2021-03-01", "AAA")))
    assert panel.shape == (1, 1, 390)
    assert panel.fill_counts == {"AAA": 0}


def test_parse_duplicate_row():
    rows = _day("2021-03-01", "AAA")
    rows.append(rows[17])
    with pytest.raises(StructuralError):
        parse_panel(_csv(rows))


def test_parse_minute_out_of_range_reports_line():
    rows = _day("2021-03-01", "AAA") + [("2021-03-01", 391, "AAA", 10.0, 1.0)]
    with pytest.raises(ParseError) as err:
        parse_panel(_csv(rows))
    assert err.value.line == 392


@pytest.mark.parametrize("bad", [("2021-13-01", 1, "A", 1, 1), ("2021-03-01", "x", "A", 1, 1),
                                 ("2021-03-01", 1, "A", -1, 1), ("2021-03-01", 1, "A", 1, "nan")])
def test_parse_malformed_fields(bad):
    with pytest.raises(ParseError):
        parse_panel(_csv([bad]))


def test_parse_bad_header():
    with pytest.raises(ParseError):
        parse_panel(io.StringIO("a,b,c\n"))


def test_parse_missing_ticker_day():
    rows = _day("2021-03-01", "AAA") + _day("2021-03-01", "BBB") + _day("2021-03-02", "AAA")
    with pytest.raises(StructuralError):
        parse_panel(_csv(rows))


def test_parse_fills_gaps():
    rows = [r for r in _day("2021-03-01", "AAA") if r[1] not in (1, 2, 50)]
    rows = [(d, m, t, float(m), v) for d, m, t, _, v in rows]
    panel = parse_panel(_csv(rows))
    assert panel.fill_counts == {"AAA": 3}
    assert panel.price[0, 0, 0] == panel.price[0, 0, 1] == 3.0
    assert panel.price[0, 0, 49] == 49.0
    assert panel.volume[0, 0, 49] == 0.0


def test_csv_round_trip(small_panel):
    text = panel_to_csv_text(small_panel)
    assert parse_panel(io.StringIO(text)) == small_panel


def test_cache_round_trip(small_panel, tmp_path):
    path = tmp_path / "p.exsp"
    write_cache(small_panel, path)
    back = read_cache(path)
    assert back == small_panel
    write_cache(back, tmp_path / "q.exsp")
    assert path.read_bytes() == (tmp_path / "q.exsp").read_bytes()


def test_cache_rejects_garbage(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(StructuralError):
        read_cache(path)


def test_folds_single():
    (fold,) = build_folds(105, 1, 60, 45)
    assert list(fold.train_days) == list(range(60))
    assert list(fold.test_days) == list(range(60, 105))


def test_folds_offset_rule():
    folds = build_folds(150, 2, 60, 45)
    assert folds[1].train == (60, 120)
    assert folds[1].test == (120, 150)


def test_folds_insufficient():
    with pytest.raises(ConfigError):
        build_folds(105, 2, 60, 45)
    with pytest.raises(ConfigError):
        build_folds(50, 1, 60, 45)


def test_profile_constant_volume(small_panel):
    v = np.full((4, MINUTES), 321.0)
    assert np.allclose(power_mean_volume(v, 0.67), 321.0, rtol=1e-14)


def test_profile_hand_value():
    v = np.array([[1.0] * MINUTES, [16.0] * MINUTES])
    assert power_mean_volume(v, 1.0) == pytest.approx(np.full(MINUTES, 2.56), rel=1e-14)


def test_profile_beta_zero_is_harmonic(rng):
    v = rng.uniform(10, 1000, size=(7, MINUTES))
    harmonic = v.shape[0] / np.sum(1.0 / v, axis=0)
    assert np.allclose(power_mean_volume(v, 0.0), harmonic, rtol=1e-13)


def test_profile_empty_days(small_panel):
    with pytest.raises(ConfigError):
        estimate_volume_profile(small_panel, "SYN00", [])


def test_twap_price_examples(rng):
    assert twap_price([1.0, 2.0, 3.0], None) == 2.0
    assert twap_price(np.full(MINUTES, 7.25)) == 7.25
    p = rng.uniform(50, 150, MINUTES)
    ref = sum(reversed(p[4::5].tolist())) / 78
    assert twap_price(p) == pytest.approx(ref, rel=1e-12)


def test_vwap_price_examples(rng):
    assert vwap_price([1.0, 2.0], [1.0, 3.0], None) == 1.75
    p = rng.uniform(50, 150, MINUTES)
    assert vwap_price(p, np.full(MINUTES, 5.0)) == pytest.approx(twap_price(p), rel=1e-14)
    v = rng.uniform(0, 1e6, MINUTES)
    pl, vl = np.longdouble(p[4::5]), np.longdouble(v[4::5])
    ref = float(np.sum(pl * vl) / np.sum(vl))
    assert vwap_price(p, v) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(DegenerateVolumeError):
        vwap_price(p, np.zeros(MINUTES))


def test_average_daily_volume(small_panel):
    days = [0, 3]
    ref = small_panel.volume[1, days].sum() / 2
    assert average_daily_volume(small_panel, "SYN01", days) == pytest.approx(ref, rel=1e-14)


def test_synth_is_deterministic():
    spec = SynthSpec(n_tickers=2, n_days=3, seed=42)
    assert synth_generate(spec) == synth_generate(spec)
    assert not synth_generate(SynthSpec(n_tickers=2, n_days=3, seed=43)) == synth_generate(spec)


def test_synth_zero_sigma_is_u_shape():
    spec = SynthSpec(n_tickers=2, n_days=2, vol_sigma=0.0, price_sigma=0.0)
    panel = synth_generate(spec)
    assert np.allclose(panel.volume, spec.profile()[:, None, :], rtol=1e-12)
    assert np.all(panel.price == panel.price[:, :, :1])
    prof = spec.profile()[0]
    assert prof[0] > prof[195] < prof[-1]


def test_synth_power_mean_calibration():
    # E[V_t ** -p] equals (level * shape_t) ** -p, checked per minute
    spec = SynthSpec(n_tickers=1, n_days=20000, seed=3, correlation=0.0)
    panel = synth_generate(spec)
    p = 1.0 / 1.67
    x = panel.volume[0] ** (-p)
    target = spec.profile()[0] ** (-p)
    z = (x.mean(axis=0) - target) / (x.std(axis=0, ddof=1) / math.sqrt(x.shape[0]))
    assert np.max(np.abs(z)) < 5.0


def test_synth_price_martingale():
    spec = SynthSpec(n_tickers=1, n_days=20000, seed=5, correlation=0.0)
    panel = synth_generate(spec)
    ratio = panel.price[0, :, 1:] / panel.price[0, :, :-1]
    z = (ratio.mean(axis=0) - 1.0) / (ratio.std(axis=0, ddof=1) / math.sqrt(ratio.shape[0]))
    assert np.max(np.abs(z)) < 5.0


def test_synth_flat_profile_without_u_shape():
    spec = SynthSpec(n_tickers=1, n_days=4000, seed=9, u_shape=False, vol_sigma=0.01)
    panel = synth_generate(spec)
    prof = power_mean_volume(panel.volume[0], spec.calib_beta)
    x = panel.volume[0] ** (-1 / 1.67)
    se = x.std(axis=0, ddof=1) / math.sqrt(x.shape[0]) / x.mean(axis=0)
    # delta method: relative error of the power mean is (beta+1) times that of the inner mean
    assert np.all(np.abs(prof / spec.volume_level - 1.0) < 5 * 1.67 * se)


def test_synth_rejects_bad_spec():
    with pytest.raises(ConfigError):
        SynthSpec(correlation=1.0)
    with pytest.raises(ConfigError):
        SynthSpec(vol_sigma=-0.1)


def test_select_days(small_panel):
    sub = small_panel.select_days([2, 5])
    assert sub.days == (small_panel.days[2], small_panel.days[5])
    assert np.array_equal(sub.volume[:, 1], small_panel.volume[:, 5])
