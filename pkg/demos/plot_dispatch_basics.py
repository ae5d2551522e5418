"""
Clearing a congested two-bus market
===================================

A cheap unit at bus 0 and an expensive one at bus 1 share a single 10 MW
line. Bus 1 is the hub. With 25 MW of demand at the hub, the line fills and
the two buses see different prices.
"""

# %%
import numpy as np

from gridmfg.core import Generator, Line, Network
from gridmfg.dispatch import linearize_costs, lmp_sensitivity_check, solve_dispatch, verify_kkt

gens = [Generator("cheap", 0, "oil", 0.0, 10.0, 50.0),
        Generator("dear", 1, "oil", 0.0, 30.0, 50.0)]
net = Network(2, np.array([[1.0, 0.0]]), [Line("L0", 10.0)], gens)
costs = linearize_costs(net, net.p_max)

# %%
# The LP picks the cheap unit until the line binds, then the dear one
# covers the rest. Prices come straight from the optimal basis.
bids = np.array([0.0, 25.0])
res = solve_dispatch(net, bids, costs)
print("output (MW):", res.p)
print("hub price:", res.hub_price)
print("LMPs:", res.lmp)
print("line multiplier (upper):", res.mu_upper)

# %%
# The KKT report lists the worst violation in each category.
print(verify_kkt(res, net, bids, costs))

# %%
# One more MW at the hub costs 30 $/h. Re-solving with a small bump in
# demand recovers the same number from the objective.
print(lmp_sensitivity_check(net, bids, costs, bus=1, eps=0.1))

# %%
# Quadratic costs are cut into equal segments. More segments bring the
# price closer to the true marginal cost 2 a p + b.
quad = Network(1, np.zeros((0, 1)), [], [Generator("q", 0, "oil", 0.02, 10.0, 100.0)])
for K in (4, 16, 64):
    r = solve_dispatch(quad, [37.0], linearize_costs(quad, [100.0], K))
    print(f"K={K:3d}  lmp={r.lmp[0]:.4f}  true={2 * 0.02 * 37 + 10:.4f}")
