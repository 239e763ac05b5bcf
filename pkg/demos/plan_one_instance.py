"""
Planning across one ambiguous map
=================================

Generate a terrain instance, fit per-class slip GPs, and compare an
expected-value plan with a CVaR plan on the same map.
"""

# %%
import numpy as np

from terra_risk import classifier, evaluation, gp, terrain
from terra_risk import rng as R
from terra_risk.risk import RiskConfig

inst = terrain.make_dataset("aa", "test", 0, 1, size=96, max_pitch_deg=30.0)[0]
hm = inst.heightmap
print("map", hm.elevation.shape, "relief", float(np.ptp(hm.elevation)), "m")

# %%
# Training data: noisy slip measurements per class on simulated slopes.

models = {}
for m in inst.slip_models:
    phi, s = terrain.simulate_measurements(m, 50, R.stream(0, R.TRAINING, m.class_id))
    models[m.class_id] = gp.fit(gp.TrainingSet(phi, s, m.class_id))
print({c: round(mdl.hyperparams.lengthscale, 3) for c, mdl in models.items()})

# %%
# A perfect classifier still splits every look-alike pair 50/50.

lik = classifier.synthetic_classify(inst, accuracy=1.0, smoothing=1)
settings = evaluation.RunSettings(RiskConfig(alpha=0.99, mc_samples=1000))
methods = evaluation.table_methods()
rows = evaluation.evaluate_instance(inst, models, lik, methods, settings)

for r in rows:
    t = r["total_time_s"] / 60
    print(f"{r['method']:9s} success={r['success']!s:5s}  planned {r['planned_cost_s'] / 60:6.1f} min"
          f"  driven {t:6.1f} min  max slip {r['max_slip_pct']:5.1f}%")
