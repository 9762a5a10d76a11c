"""Walk the book for a single sell order, then compare TWAP and VWAP
schedules on a U-shaped day.

    python demos/impact_walkthrough.py
"""

import numpy as np

from lobexec.impact import ImpactParams, impacted_relative_price, liquidity_coefficient, walk_cost
from lobexec.oracle import optimal_deterministic_schedule, schedule_cost, u_shaped_instance
from lobexec.strategies import twap_schedule, vwap_schedule

params = ImpactParams(epsilon=0.003, beta=0.67)
print(f"liquidity coefficient C = {liquidity_coefficient(params.epsilon, params.beta):.4e}")

# selling 10k shares into a minute that traded 1M
price, volume, shares = 100.0, 1e6, -1e4
r = impacted_relative_price(shares, volume, params)
cost = walk_cost(price, volume, shares, params)
print(f"sell {-shares:.0f} @ {price}: book walks to {r:.6f} of mid, cost ${cost:.4f} "
      f"({1e4 * cost / (-shares * price):.4f} bps)")

# a deterministic U-shaped day with 78 five-minute trades; volumes are the
# unit-scale shape, so only cost ratios are meaningful
inst = u_shaped_instance(78, params.beta, x0=1.0)
best = optimal_deterministic_schedule(inst)
vwap = vwap_schedule(1.0, inst.volumes)
ref = schedule_cost(vwap.actions, inst)
for name, sched in (("twap", twap_schedule(1.0)), ("vwap", vwap), ("optimum", best)):
    print(f"{name:8s} cost / vwap cost {schedule_cost(sched.actions, inst) / ref:.6f}")
print(f"max |optimum - vwap| per trade, as a fraction of x0: {np.max(np.abs(best.actions - vwap.actions)):.2e}")
