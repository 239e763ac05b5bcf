import numpy as np

from terra_risk import gp, terrain
from terra_risk import rng as R


def flat_instance(size=16, classes=None, models=None, kind="std", elevation=None):
    """Hand-built instance; zero-noise, zero-slip single class by default."""
    elev = np.zeros((size, size), np.float32) if elevation is None else np.asarray(elevation, np.float32)
    h, w = elev.shape
    cls = np.zeros((h, w), np.uint16) if classes is None else np.asarray(classes, np.uint16)
    if models is None:
        models = (terrain.SlipGroundTruth(0, 0.0, 0.0, 1.0, noise_sigma=0.0),)
    members = tuple(sorted({int(c) for c in np.unique(cls)}))
    occ = tuple([1.0 / len(members)] * len(members))
    occ = occ[:-1] + (1.0 - sum(occ[:-1]),)
    return terrain.ProblemInstance(kind, "test", 0, 123, terrain.HeightMap(elev), terrain.ClassMap(cls),
                                   terrain.EnvironmentGroup(members, occ), tuple(models),
                                   tuple(range(len(models))))


def fit_models(slip_models, n=30, seed=0):
    out = {}
    for m in slip_models:
        phi, s = terrain.simulate_measurements(m, n, R.stream(seed, R.TRAINING, m.class_id))
        out[m.class_id] = gp.fit(gp.TrainingSet(phi, s, m.class_id))
    return out
