import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobexec.errors import ConfigError, ContractViolation, DegenerateVolumeError
from lobexec.market_data import MINUTES, u_shape
from lobexec.strategies import (
    Schedule,
    benchmark_inventories,
    profile_at_trades,
    twap_schedule,
    vwap_schedule,
)


def test_twap_examples():
    assert np.array_equal(twap_schedule(780, 78).actions, np.full(78, -10.0))
    assert np.array_equal(twap_schedule(-100, 4).actions, np.full(4, 25.0))


def test_twap_zero_trades():
    with pytest.raises(ConfigError):
        twap_schedule(100, 0)


def test_vwap_examples():
    assert np.array_equal(vwap_schedule(4.0, [1.0, 3.0]).actions, [-1.0, -3.0])
    assert np.array_equal(vwap_schedule(780.0, np.full(78, 2.5)).actions, twap_schedule(780.0).actions)


def test_vwap_bad_profile():
    with pytest.raises(DegenerateVolumeError):
        vwap_schedule(10.0, [1.0, 0.0])


@settings(max_examples=200)
@given(x0=st.floats(-1e7, 1e7), profile=st.lists(st.floats(1e-3, 1e6), min_size=1, max_size=100))
def test_vwap_sums_exactly(x0, profile):
    sched = vwap_schedule(x0, profile)
    assert math.fsum(sched.actions) == pytest.approx(-x0, abs=1e-9 * max(abs(x0), 1.0))
    assert sched.inventory()[-1] == 0.0


def test_schedule_contract():
    with pytest.raises(ContractViolation):
        Schedule(np.array([-1.0, -1.0]), 3.0)
    with pytest.raises(ContractViolation):
        Schedule.from_inventory([3.0, 1.0, 0.5])


def test_schedule_inventory_round_trip():
    path = np.array([5.0, 4.0, 1.5, 0.0])
    sched = Schedule.from_inventory(path)
    assert np.array_equal(sched.inventory(), path)


def test_rounded_schedule_whole_shares():
    sched = vwap_schedule(1001.0, u_shape(78)[1:]).rounded()
    assert np.all(sched.actions == np.round(sched.actions))
    assert math.fsum(sched.actions) == -1001.0


def test_profile_at_trades():
    prof = np.arange(1.0, MINUTES + 1)
    sub = profile_at_trades(prof)
    assert sub.shape == (78,) and sub[0] == 5.0 and sub[-1] == 390.0
    with pytest.raises(ConfigError):
        profile_at_trades(np.ones(10))


def test_benchmark_inventories_boundaries():
    prof = np.stack([np.ones(MINUTES), u_shape()[1:]])
    inv = benchmark_inventories([1000.0, -500.0], prof)
    for path in (inv.twap_path, inv.vwap_path):
        assert np.array_equal(path[:, 0], [1000.0, -500.0])
        assert np.array_equal(path[:, -1], [0.0, 0.0])
    assert inv.twap_path[0, 195] == pytest.approx(500.0, rel=1e-15)
    assert inv.vwap_path[0, 195] == pytest.approx(500.0, rel=1e-14)
    # front-loaded volume means the VWAP path runs ahead of TWAP by midday
    assert inv.vwap_path[1, 100] > inv.twap_path[1, 100]


def test_benchmark_minute_range():
    with pytest.raises(ConfigError):
        benchmark_inventories([1.0], np.ones((1, MINUTES)), [391])
