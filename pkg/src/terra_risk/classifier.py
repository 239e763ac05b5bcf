"""Per-cell terrain-class likelihoods.

Two providers: a parametric error model driven by the ground-truth class
map (a stand-in for a trained segmentation network) and a loader for
externally produced likelihood rasters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .errors import DataError, ParameterError

RENORMALIZE_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class LikelihoodMap:
    """Categorical class distribution per cell, ``probs[row, col, class]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ParameterError("probs must be (height, width, num_classes)")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ParameterError("probabilities must be finite and non-negative")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-6:
            raise ParameterError("per-cell probabilities must sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def height(self):
        return self.probs.shape[0]

    @property
    def width(self):
        return self.probs.shape[1]

    @property
    def num_classes(self):
        return self.probs.shape[2]

    def at(self, cell):
        return self.probs[cell[0], cell[1]]

    def argmax(self):
        return np.argmax(self.probs, axis=2)

    def one_hot_argmax(self):
        """Likelihoods collapsed onto the most likely class (first on ties)."""
        out = np.zeros_like(self.probs)
        idx = self.argmax()
        np.put_along_axis(out, idx[..., None], 1.0, axis=2)
        return LikelihoodMap(out)


def softmax_from_logits(logits):
    """Stable softmax over the last axis of a ``(H, W, C)`` logit array."""
    a = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DataError("logits contain NaN or infinite values")
    if a.ndim == 1:
        a = a[None, None, :]
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return LikelihoodMap(e / e.sum(axis=-1, keepdims=True))


def synthetic_classify(instance, accuracy=0.95, smoothing=1, seed=0, logit_noise=0.0):
    """Emulate a segmentation network from the ground-truth class map.

    ``accuracy`` of each cell's mass goes to its true class (to both members
    of the true appearance pair, split evenly, for AA) and the rest is spread
    uniformly over the other classes.  The planes are then box-blurred with
    radius ``smoothing`` cells and renormalized.  ``logit_noise`` optionally
    perturbs log-probabilities with seeded Gaussian noise before blurring.
    """
    n_cls = instance.num_classes
    if not (1.0 / n_cls < accuracy <= 1.0):
        raise ParameterError(f"accuracy must lie in (1/{n_cls}, 1], got {accuracy}")
    if smoothing < 0 or logit_noise < 0:
        raise ParameterError("smoothing and logit_noise must be non-negative")
    keys = np.asarray(instance.appearance_key if instance.appearance_key else range(n_cls))
    truth = instance.classmap.class_id.astype(int)
    true_key = keys[truth]
    # share[c, k]: mass class c receives when the true appearance key is k
    share = np.zeros((n_cls, keys.max() + 1))
    for k in range(share.shape[1]):
        same = keys == k
        share[same, k] = accuracy / same.sum()
        if (~same).any():
            share[~same, k] = (1.0 - accuracy) / (~same).sum()
    probs = np.moveaxis(share[:, true_key], 0, -1)
    if logit_noise > 0:
        g = rngmod.stream(seed, rngmod.CLASSIFIER, instance.seed)
        logp = np.log(np.maximum(probs, 1e-300)) + logit_noise * g.standard_normal(probs.shape)
        probs = np.exp(logp - logp.max(axis=-1, keepdims=True))
    size = 2 * int(round(smoothing)) + 1
    if size > 1:
        # running-sum filter can leave -1e-17 residue on zero planes
        probs = np.maximum(ndimage.uniform_filter(probs, size=(size, size, 1), mode="nearest"), 0.0)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    return LikelihoodMap(probs)


def save_likelihoods(lmap, path):
    """Header-free little-endian float32 raster, class-major planes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(np.moveaxis(lmap.probs, -1, 0)).astype("<f4").tofile(path)
    return path


def load_likelihoods(path, shape=None):
    """Read a ``likelihood.f32`` raster.

    ``shape`` is ``(height, width, num_classes)``; when omitted it comes from
    the ``manifest.json`` next to the file.  Rows within 1e-3 of unit sum are
    renormalized, others rejected.
    """
    path = Path(path)
    if shape is None:
        manifest = path.parent / "manifest.json"
        if not manifest.exists():
            raise DataError(f"no shape given and no manifest.json beside {path}")
        m = json.loads(manifest.read_text())
        shape = (int(m["height"]), int(m["width"]), int(m["num_classes"]))
    h, w, c = shape
    if not path.exists():
        raise DataError(f"missing likelihood raster {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != h * w * c:
        raise DataError(f"{path} holds {raw.size} values, expected {h}x{w}x{c} = {h * w * c}")
    probs = np.moveaxis(raw.reshape(c, h, w), 0, -1).astype(float)
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise DataError(f"{path} contains negative or non-finite probabilities")
    sums = probs.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > RENORMALIZE_TOL:
        raise DataError(f"{path}: per-cell sums deviate from 1 by up to {worst:.3g}")
    if worst > 1e-6:  # beyond float32 rounding
        probs = probs / sums[..., None]
    return LikelihoodMap(probs)
