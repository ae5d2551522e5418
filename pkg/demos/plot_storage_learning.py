"""
Learning when to charge
=======================

One aggregator believes power costs 10 $/MWh in the first half of the day
and 50 $/MWh in the second. The best plan is obvious: fill the battery when
it is cheap and empty it when it is dear. Here a tabular learner and the
policy-gradient learner both find it.
"""

# %%
import numpy as np

from gridmfg.core import DemandProfile, RngStream, TriangularDist
from gridmfg.learning import QParams, TrainEnv, train_q
from gridmfg.learning.pg import train_pg

belief = np.array([10.0, 50.0])
profile = DemandProfile(np.zeros(2), TriangularDist(1.0, 1.0, 1.0))
env = TrainEnv(belief, 0.0, profile, eta=1.0, capacity_kwh=10.0)

# %%
# Wide exploration and a polynomial step size let every storage level get
# visited and settled.
q_pol = train_q(env, 10**6, RngStream(0), QParams(eps_start=1.0, eps_end=0.1, alpha_power=0.6))
pg_pol = train_pg(env, 10**5, RngStream(0))


def greedy(policy, hour):
    return policy.space.values[np.argmax(policy.probs[:, hour, 0], axis=-1)]


# %%
# Rows are storage levels 0.0 to 1.0; each entry is the chosen action.
levels = np.arange(11) / 10
print("level   Q cheap  Q dear   PG cheap  PG dear")
for i, x in enumerate(levels):
    print(f"{x:4.1f}   {greedy(q_pol, 0)[i]:+6.1f}  {greedy(q_pol, 1)[i]:+6.1f}"
          f"   {greedy(pg_pol, 0)[i]:+6.1f}   {greedy(pg_pol, 1)[i]:+6.1f}")

# %%
# Masked actions never get probability: from a full battery neither
# learner can charge.
print("PG mass on charging from full storage:", pg_pol.probs[10, :, 0, 11:].sum())
