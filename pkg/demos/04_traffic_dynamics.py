"""
Packet dynamics on a closed network
===================================

Packets near the end of an arc try to leave; they only move when the
downstream arcs have room. Nothing enters or leaves the network, so the
packet total is fixed.
"""

# %%
import numpy as np

from odce.graph import Network
from odce.odestim import CostModel
from odce.pfilter import DynamicsParams, TrafficState, simulate_trajectory

net = Network(4)
rng = np.random.default_rng(0)
params = DynamicsParams(net, beta=1.0, L=rng.uniform(1, 4, net.n), Ymax=6,
                        cost_model=CostModel("affine", 1.0, 0.5))
start = TrafficState.from_loads(rng.integers(0, 7, net.n), params.cost_model)

# %%
traj = simulate_trajectory(start, params, 200, rng)
totals = {int(s.Y.sum()) for s in traj}
peak = max(int(s.Y.max()) for s in traj)
print("packet totals seen:", totals, " largest arc load:", peak, "of", 6)

# %%
print("first arc over time:", [int(s.Y[0]) for s in traj[:20]])
