"""Exact Gaussian-process regression of slip against pitch, one model per class.

Zero prior mean, squared-exponential kernel, hyperparameters picked by
exhaustive log-marginal-likelihood search over a log-spaced grid.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DataError, FitError, ParameterError

_JITTERS = (0.0,) + tuple(10.0**k for k in range(-10, -3))
_LOG_2PI = math.log(2 * math.pi)
_PITCH_LIMIT = math.radians(45.0) + 1e-12


@dataclass(frozen=True)
class GPHyperparams:
    lengthscale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        for name in ("lengthscale", "signal_variance", "noise_variance"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class TrainingSet:
    pitches: np.ndarray
    slips: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        p = np.asarray(self.pitches, dtype=float).ravel()
        s = np.asarray(self.slips, dtype=float).ravel()
        if p.size == 0 or p.size != s.size:
            raise ParameterError("training set needs equal, non-zero numbers of pitches and slips")
        if np.any(np.abs(p) > _PITCH_LIMIT):
            raise ParameterError("training pitches must lie within +-45 degrees")
        object.__setattr__(self, "pitches", p)
        object.__setattr__(self, "slips", s)

    def __len__(self):
        return self.pitches.size


@dataclass(frozen=True, eq=False)
class GPModel:
    hyperparams: GPHyperparams
    training_set: TrainingSet
    chol: np.ndarray  # lower factor of K + (noise + jitter) I
    alpha: np.ndarray  # (K + (noise + jitter) I)^-1 y
    jitter: float = 0.0

    @property
    def class_id(self):
        return self.training_set.class_id


def se_kernel(a, b, lengthscale, signal_variance):
    d = np.subtract.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return signal_variance * np.exp(-0.5 * (d / lengthscale) ** 2)


def default_grid():
    """Log-spaced (lengthscale, signal_variance, noise_variance) grid."""
    return {
        "lengthscale": tuple(np.geomspace(0.05, 2.0, 10)),
        "signal_variance": tuple(np.geomspace(1e-3, 2.0, 10)),
        "noise_variance": tuple(np.geomspace(1e-5, 0.1, 10)),
    }


def _factorize(ts, hp):
    K = se_kernel(ts.pitches, ts.pitches, hp.lengthscale, hp.signal_variance)
    K[np.diag_indices_from(K)] += hp.noise_variance
    for jitter in _JITTERS:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(ts)) if jitter else K)
        except np.linalg.LinAlgError:
            continue
        return L, cho_solve((L, True), ts.slips), jitter
    return None


def _lml(ts, L, alpha):
    return float(-0.5 * ts.slips @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(ts) * _LOG_2PI)


def condition(training_set, hyperparams):
    """Build a GP posterior for fixed hyperparameters."""
    res = _factorize(training_set, hyperparams)
    if res is None:
        raise FitError(f"covariance of class {training_set.class_id} is not positive definite after jitter")
    L, alpha, jitter = res
    return GPModel(hyperparams, training_set, L, alpha, jitter)


def fit(training_set, grid=None):
    """Pick the grid point with the highest log marginal likelihood.

    Ties keep the earliest grid point in (lengthscale, signal, noise) order.
    """
    grid = default_grid() if grid is None else grid
    best = None
    for ell, sf2, sn2 in itertools.product(grid["lengthscale"], grid["signal_variance"], grid["noise_variance"]):
        hp = GPHyperparams(float(ell), float(sf2), float(sn2))
        res = _factorize(training_set, hp)
        if res is None:
            continue
        score = _lml(training_set, res[0], res[1])
        if best is None or score > best[0]:
            best = (score, hp, res)
    if best is None:
        raise FitError(f"no grid point gives a factorizable covariance for class {training_set.class_id}")
    _, hp, (L, alpha, jitter) = best
    return GPModel(hp, training_set, L, alpha, jitter)


def predict(model, phi):
    """Posterior predictive mean and variance (noise included) at pitch ``phi``."""
    hp = model.hyperparams
    phi = np.asarray(phi, dtype=float)
    Ks = se_kernel(phi.ravel(), model.training_set.pitches, hp.lengthscale, hp.signal_variance)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True)
    prior = hp.signal_variance + hp.noise_variance
    var = np.clip(prior - np.einsum("ij,ij->j", v, v), np.finfo(float).tiny, prior)
    if phi.ndim == 0:
        return float(mean[0]), float(var[0])
    return mean.reshape(phi.shape), var.reshape(phi.shape)


def log_marginal_likelihood(model):
    return _lml(model.training_set, model.chol, model.alpha)


def train_class_models(training_sets, grid=None):
    """Fit one model per training set; returns ``{class_id: GPModel}``."""
    return {ts.class_id: fit(ts, grid) for ts in training_sets}


# ---------------------------------------------------------------------------
# persistence: hyperparameters + raw data, factor recomputed on load


def model_to_dict(model):
    hp = model.hyperparams
    ts = model.training_set
    return {
        "class_id": ts.class_id,
        "kernel": "squared_exponential",
        "hyperparams": {
            "lengthscale": hp.lengthscale,
            "signal_variance": hp.signal_variance,
            "noise_variance": hp.noise_variance,
        },
        "pitches": ts.pitches.tolist(),
        "slips": ts.slips.tolist(),
    }


def model_from_dict(d):
    try:
        hp = GPHyperparams(**{k: float(v) for k, v in d["hyperparams"].items()})
        ts = TrainingSet(np.array(d["pitches"], dtype=float), np.array(d["slips"], dtype=float), int(d["class_id"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed GP model record: {exc}") from exc
    return condition(ts, hp)


def save_model(model, directory):
    path = Path(directory) / f"gp_{model.class_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n")
    return path


def load_models(directory):
    files = sorted(Path(directory).glob("gp_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise DataError(f"no gp_<class>.json files in {directory}")
    models = {}
    for f in files:
        m = model_from_dict(json.loads(f.read_text()))
        models[m.class_id] = m
    return models
