"""
Tracking traffic with a particle filter
=======================================

Two arcs form a loop. Noisy observations of the loads are filtered with a
bootstrap particle filter and compared to the exact posterior, which is
cheap to enumerate here. Without resampling the weights collapse onto a
few particles.
"""

# %%
import numpy as np

from odce.graph import Network
from odce.odestim import CostModel
from odce.pfilter import DynamicsParams, TrafficState, filter_run, simulate_trajectory

total, sigma = 20, 1.5
params = DynamicsParams(Network(2), 1.0, np.array([1 / 0.3, 1 / 0.5]), total,
                        CostModel("constant-random", 1.0, 0.0))
init = TrafficState(np.array([total, 0]), np.ones(2))
truth = simulate_trajectory(init, params, 15, np.random.default_rng(0))[1:]
obs = np.array([s.Y for s in truth]) + np.random.default_rng(1).normal(0, sigma, (15, 2))


def loads(state, k):
    return state.Y.astype(float)


# %%
for M in (10, 100, 1000):
    out = filter_run(obs, params, init, M=M, sigma=sigma, observe=loads)
    err = np.mean([abs(s.mean_Y[0] - t.Y[0]) for s, t in zip(out.steps, truth)])
    print(f"M={M:5d}  mean |filter - truth| on arc 0: {err:.3f}")

# %%
out = filter_run(obs, params, init, M=200, sigma=sigma, resample_threshold=0.0, observe=loads)
print("ESS without resampling:", np.round(out.ess, 1))
