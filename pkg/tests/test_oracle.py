import json

import numpy as np
import pytest

from lobexec.errors import ConfigError
from lobexec.market_data import SynthSpec
from lobexec.oracle import (
    DeterministicInstance,
    check_prop2_martingale,
    closed_form_schedule,
    compare_vwap_policies,
    costate_residual,
    optimal_deterministic_schedule,
    prop1_grid,
    schedule_cost,
    u_shaped_instance,
    verification_report,
    write_verification_report,
)
from lobexec.strategies import twap_schedule, vwap_schedule


def test_two_trade_example():
    inst = DeterministicInstance(np.ones(2), np.array([1.0, 2.0]), 3.0, 1.0)
    sol = optimal_deterministic_schedule(inst)
    assert np.allclose(sol.actions, [-1.0, -2.0], rtol=1e-8)
    # grid search over a_0 at 1e-6 resolution
    a0 = -np.arange(0, 3_000_001) * 1e-6
    cost = np.abs(a0) ** 1.5 + 2 ** -0.5 * np.abs(-3.0 - a0) ** 1.5
    best = a0[np.argmin(cost)]
    assert abs(best - sol.actions[0]) <= 1e-6


def test_flat_instance_gives_twap():
    inst = DeterministicInstance(np.full(10, 42.0), np.full(10, 7.0), 500.0, 0.67)
    sol = optimal_deterministic_schedule(inst)
    assert np.allclose(sol.actions, twap_schedule(500.0, 10).actions, rtol=1e-8, atol=0)


@pytest.mark.parametrize("beta", [0.0, 0.67, 2.0])
def test_u_shape_gives_vwap(beta):
    inst = u_shaped_instance(78, beta, x0=1e6, price=30.0)
    sol = optimal_deterministic_schedule(inst)
    ref = vwap_schedule(1e6, inst.volumes)
    assert np.allclose(sol.actions, ref.actions, rtol=1e-8, atol=0)


def test_solution_unique_from_different_starts(rng):
    inst = DeterministicInstance(rng.uniform(50, 60, 12), rng.uniform(1e3, 1e4, 12), 2e4, 0.67)
    ref = closed_form_schedule(inst)
    for _ in range(3):
        start = -rng.dirichlet(np.ones(12)) * 2e4
        sol = optimal_deterministic_schedule(inst, start=start)
        assert np.allclose(sol.actions, ref.actions, rtol=1e-7, atol=0)


def test_closed_form_is_cheapest(rng):
    inst = DeterministicInstance(rng.uniform(50, 60, 8), rng.uniform(1e3, 1e4, 8), 1e4, 1.0)
    best = schedule_cost(closed_form_schedule(inst).actions, inst)
    for _ in range(50):
        other = -rng.dirichlet(np.ones(8)) * 1e4
        assert schedule_cost(other, inst) >= best


def test_sign_symmetry():
    inst = u_shaped_instance(6, 0.5, x0=100.0)
    neg = u_shaped_instance(6, 0.5, x0=-100.0)
    a = optimal_deterministic_schedule(inst).actions
    b = optimal_deterministic_schedule(neg).actions
    assert np.allclose(a, -b, rtol=1e-9)


def test_costate_residuals():
    inst = u_shaped_instance(78, 0.67)
    assert costate_residual(vwap_schedule(1.0, inst.volumes), inst).residual < 1e-8
    assert costate_residual(twap_schedule(1.0), inst).residual > 1e-3


def test_costate_price_scaling(rng):
    base = DeterministicInstance(rng.uniform(1, 2, 5), rng.uniform(1, 2, 5), 1.0, 0.67)
    scaled = DeterministicInstance(base.prices * 7.5, base.volumes, 1.0, 0.67)
    sched = -rng.dirichlet(np.ones(5))
    r1, r2 = costate_residual(sched, base), costate_residual(sched, scaled)
    assert np.allclose(r2.lambdas, 7.5 * r1.lambdas, rtol=1e-14)
    assert r2.residual == pytest.approx(r1.residual, rel=1e-12)


def test_costate_undefined_trades():
    inst = DeterministicInstance(np.ones(3), np.ones(3), 1.0, 1.0)
    res = costate_residual(np.array([-0.5, 0.0, -0.5]), inst)
    assert res.undefined == (1,)
    assert res.residual == 0.0


def test_instance_validation():
    with pytest.raises(ConfigError):
        DeterministicInstance(np.ones(3), np.ones(2), 1.0, 0.5)
    with pytest.raises(ConfigError):
        DeterministicInstance(np.ones(2), np.ones(2), 0.0, 0.5)


def test_martingale_deterministic_volume():
    spec = SynthSpec(n_tickers=1, vol_sigma=0.0)
    stats = check_prop2_martingale(spec, n_paths=2000, chunk=1000)
    used = stats.count > 0
    assert np.all(stats.ratio[used] == 1.0)


def test_martingale_small_run_warns():
    stats = check_prop2_martingale(SynthSpec(n_tickers=1), n_paths=500, n_bins=5)
    assert stats.warnings
    assert stats.max_abs_z < 6.0


def test_vwap_beats_perturbed_policies_small():
    comp = compare_vwap_policies(SynthSpec(n_tickers=1), n_paths=2000, n_policies=10)
    assert comp.min_z > -3.0
    assert np.all(comp.policy_costs > 0)


def test_prop1_grid_small():
    rows = prop1_grid(betas=(0.5,), lengths=(2, 4))
    assert len(rows) == 4 and all(r["pass"] for r in rows)


def test_verification_report_json(tmp_path):
    rep = verification_report(SynthSpec(n_tickers=1), n_paths=2000, n_policy_paths=500, n_policies=3)
    path = tmp_path / "v.json"
    write_verification_report(rep, path)
    back = json.loads(path.read_text())
    assert set(back["checks"]) == set(rep["checks"])
    assert back["pass"] == all(back["checks"].values())
