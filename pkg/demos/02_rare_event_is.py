"""
Importance sampling for a rare event
====================================

Estimate ``P(S(x) >= gamma)`` on a 20-state space. Sampling from the
nominal density is crude Monte Carlo; sampling from the density restricted
to the event makes every summand equal to the answer.
"""

# %%
import numpy as np

from odce.ce import DiscreteDensity, crude_mc, rare_event_is

w = np.arange(20, 0, -1, dtype=float)
f = DiscreteDensity(w / w.sum())
gamma = 17
S = np.asarray
exact = w[gamma:].sum() / w.sum()
print("exact probability", exact)

# %%
rng = np.random.default_rng(0)
print("crude estimate   ", crude_mc(f, S, gamma, 2000, rng))

# %%
hit = np.arange(20) >= gamma
g_star = DiscreteDensity(np.where(hit, f.pmf_values, 0) / f.pmf_values[hit].sum())
est, terms = rare_event_is(f.pdf, g_star, S, gamma, 2000, rng, return_terms=True)
print("optimal IS       ", est, " summand variance", terms.var())
