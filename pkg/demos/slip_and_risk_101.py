"""
Slip, mixtures and tail risk
============================

Why a mean estimate is not enough when two terrain types look alike.
"""

# %%
# Two classes that share an appearance
# -------------------------------------
#
# A pair of terrain classes in the ambiguous (AA) set looks identical to the
# camera, but one is far more slippery on slopes.

import numpy as np

from terra_risk import rng as R
from terra_risk import terrain
from terra_risk.risk import MixtureSlipDistribution, cvar, var

models = terrain.slip_models_for("aa")
safe, slick = models[0], models[1]
for phi_deg in (0, 10, 20):
    phi = np.radians(phi_deg)
    print(f"{phi_deg:2d} deg  class {safe.class_id}: {safe.mean(phi):.2f}  class {slick.class_id}: {slick.mean(phi):.2f}")

# %%
# The classifier cannot split the pair, so it reports 50/50.  The slip on a
# 20 degree climb is then a two-component mixture.

phi = np.radians(20)
mix = MixtureSlipDistribution([0.5, 0.5], [safe.mean(phi), slick.mean(phi)],
                              [safe.sigma(phi) ** 2, slick.sigma(phi) ** 2])
x = mix.sample(R.stream(0, 1), 20_000)

print("mean      ", round(mix.mean(), 3))
for a in (0.6, 0.9, 0.99):
    print(f"VaR {a:<5} {var(x, a):.3f}   CVaR {a:<5} {cvar(x, a):.3f}")

# %%
# The mean sits between the two modes and would call the climb passable;
# the tail statistics see the slippery mode.  A slip of 1 means the rover
# stops, which is the failure the risk-aware planner tries to avoid.
print("P(slip >= 1) ~", np.mean(x >= 1.0))
