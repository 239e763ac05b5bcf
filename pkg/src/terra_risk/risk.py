"""Mixture-of-GP slip distributions and their risk statistics.

The slip on an edge is a likelihood-weighted mixture of the per-class GP
predictives.  Descending edges are scored through the slip-as-risk variable
``2 S(0) - S(phi)``, which penalises deviation from flat-ground behaviour.
VaR and CVaR of these mixtures are Monte-Carlo estimates.

Sampling works on *blocks*: ``n`` uniforms ``u`` (sorted) and ``n`` standard
normals ``z``.  A sample's class is the inverse-CDF of ``u`` under the
mixture weights, its value ``mean[class] + std[class] * z``.  Because the
uniforms are sorted, every class owns a contiguous run of the block, which
lets many edges share one block without per-edge random draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from .errors import ConfigError, ParameterError
from .gp import predict

WEIGHT_FLOOR = 1e-12
METRICS = ("ev", "var", "cvar")


@dataclass(frozen=True, eq=False)
class MixtureSlipDistribution:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    class_ids: tuple = ()

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise ParameterError("weights, means and variances must be equal-length vectors")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ParameterError("mixture weights must be non-negative and sum to 1")
        if np.any(v <= 0):
            raise ParameterError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def stds(self):
        return np.sqrt(self.variances)

    def mean(self):
        return float(self.weights @ self.means)

    def variance(self):
        """Law of total variance."""
        mu = self.mean()
        return float(self.weights @ (self.variances + (self.means - mu) ** 2))

    def cdf(self, x):
        return float(self.weights @ special.ndtr((x - self.means) / self.stds))

    def sample(self, rng, n):
        u, z = draw_block(rng, n)
        return block_samples(self.weights[None], self.means[None], self.stds[None], u, z)[0]


@dataclass(frozen=True)
class RiskConfig:
    alpha: float = 0.99
    mc_samples: int = 20_000
    seed: int = 0
    shared_class: bool = True

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mc_samples < 1:
            raise ParameterError("mc_samples must be at least 1")
        if self.alpha > 0.9 and self.mc_samples < 1000:
            raise ParameterError("alpha > 0.9 needs at least 1000 Monte-Carlo samples")


# ---------------------------------------------------------------------------
# mixture construction


def _prune(weights):
    w = np.where(weights < WEIGHT_FLOOR, 0.0, weights)
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ParameterError("all mixture weights fall below the pruning floor")
    return w / total


def mixture_at_edge(likelihoods, gp_models, phi):
    """Mixture of class GP predictives at pitch ``phi`` weighted by ``likelihoods``."""
    w = np.asarray(likelihoods, dtype=float)
    keep = np.flatnonzero(w >= WEIGHT_FLOOR)
    if keep.size == 0:
        raise ParameterError("likelihood vector has no mass above the pruning floor")
    missing = [int(c) for c in keep if c not in gp_models]
    if missing:
        raise ConfigError(f"no GP model for weighted classes {missing}")
    mv = [predict(gp_models[int(c)], phi) for c in keep]
    weights = w[keep] / w[keep].sum()
    return MixtureSlipDistribution(weights, [m for m, _ in mv], [v for _, v in mv], tuple(int(c) for c in keep))


def risk_components(phi, mu_phi, var_phi, mu_0, var_0):
    """Per-class Gaussian of the slip-as-risk variable (class draw shared).

    Ascending: ``S(phi)``.  Descending: ``2 S(0) - S(phi)`` with the two
    Gaussian draws independent, i.e. mean ``2 mu0 - mu`` and variance
    ``4 var0 + var``.  All arguments broadcast; pass ``phi[..., None]`` when
    the others carry a trailing class axis.  Returns ``(means, stds)``.
    """
    asc = np.asarray(phi) >= 0
    mean = np.where(asc, mu_phi, 2.0 * mu_0 - mu_phi)
    var = np.where(asc, var_phi, 4.0 * var_0 + var_phi)
    return mean, np.sqrt(var)


def risk_mixture(mix_phi, mix_0, phi, shared_class=True):
    """Slip-as-risk distribution at pitch ``phi`` as a Gaussian mixture."""
    if phi >= 0:
        return mix_phi
    if shared_class:
        if mix_phi.weights.shape != mix_0.weights.shape or not np.allclose(mix_phi.weights, mix_0.weights):
            raise ParameterError("shared-class sampling needs equal weights at phi and at 0")
        mean, std = risk_components(phi, mix_phi.means, mix_phi.variances, mix_0.means, mix_0.variances)
        return MixtureSlipDistribution(mix_phi.weights, mean, std**2, mix_phi.class_ids)
    # independent class draws: one component per (class at 0, class at phi)
    w = np.outer(mix_0.weights, mix_phi.weights).ravel()
    mean = (2.0 * mix_0.means[:, None] - mix_phi.means[None, :]).ravel()
    var = (4.0 * mix_0.variances[:, None] + mix_phi.variances[None, :]).ravel()
    return MixtureSlipDistribution(w / w.sum(), mean, var)


# ---------------------------------------------------------------------------
# sampling


def draw_block(rng, n):
    """``n`` sorted uniforms and ``n`` matching standard normals."""
    u = rng.random(n)
    z = rng.standard_normal(n)
    order = np.argsort(u, kind="stable")
    return u[order], z[order]


def block_samples(weights, means, stds, u, z):
    """Mixture samples for a batch of edges from one shared block.

    ``weights``, ``means``, ``stds`` are ``(E, C)``; returns ``(E, n)``.
    """
    w = _prune(np.asarray(weights, dtype=float))
    e, c = w.shape
    n = u.size
    cum = np.cumsum(w, axis=1)
    cum /= cum[:, -1:]
    last = c - 1 - np.argmax(w[:, ::-1] > 0, axis=1)
    cum[np.arange(c)[None, :] >= last[:, None]] = 1.0
    bounds = np.searchsorted(u, cum.ravel(), side="left").reshape(e, c)
    counts = np.diff(bounds, axis=1, prepend=0).ravel()
    # classes own contiguous runs of the block, so repeating each component's
    # parameters by its count lines them up with z
    m = np.repeat(np.broadcast_to(means, (e, c)).ravel(), counts)
    s = np.repeat(np.broadcast_to(stds, (e, c)).ravel(), counts)
    return (m + s * np.tile(z, e)).reshape(e, n)


def slip_as_risk_samples(mix_phi, mix_0, phi, rng, n, shared_class=True):
    """Monte-Carlo samples of the slip-as-risk variable at pitch ``phi``."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    return risk_mixture(mix_phi, mix_0, phi, shared_class).sample(rng, n)


# ---------------------------------------------------------------------------
# statistics


def _var_index(alpha, n):
    if not (0.0 <= alpha <= 1.0):
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    # round away float fuzz such as 0.9 * 100 = 90.00000000000001
    return math.ceil(round(alpha * n, 9)) - 1


def _as_rows(samples):
    x = np.asarray(samples, dtype=float)
    if x.size == 0 or x.shape[-1] == 0:
        raise ParameterError("need at least one sample")
    return x.reshape(-1, x.shape[-1]), x.shape[:-1]


def sorted_statistics(sorted_rows, specs):
    """Risk statistics of row-sorted samples.

    ``specs`` is an iterable of ``(metric, alpha)`` with metric in
    ``{"ev", "var", "cvar"}``; returns ``{spec: values}``.
    """
    x = sorted_rows
    n = x.shape[1]
    out = {}
    for metric, alpha in specs:
        if metric == "ev":
            out[(metric, alpha)] = x.mean(axis=1)
            continue
        if metric not in METRICS:
            raise ParameterError(f"unknown risk metric {metric!r}")
        k = _var_index(alpha, n)
        var = x[:, max(k, 0)]
        if metric == "var":
            out[(metric, alpha)] = var.copy()
        elif k < 0:
            out[(metric, alpha)] = x.mean(axis=1)
        else:
            # rows are sorted: everything strictly above the VaR sits past index k
            tail = x[:, k + 1:]
            above = tail > var[:, None]
            count = above.sum(axis=1)
            total = np.where(above, tail, 0.0).sum(axis=1)
            out[(metric, alpha)] = np.where(count > 0, total / np.maximum(count, 1), var)
    return out


def expected_value(samples):
    rows, shape = _as_rows(samples)
    return _unwrap(rows.mean(axis=1), shape)


def var(samples, alpha):
    """Empirical (1 - alpha) upper quantile: sorted sample ``ceil(alpha n) - 1``.

    ``alpha = 0`` gives the sample minimum, ``alpha = 1`` the maximum.
    """
    rows, shape = _as_rows(samples)
    return _unwrap(sorted_statistics(np.sort(rows, axis=1), [("var", alpha)])[("var", alpha)], shape)


def cvar(samples, alpha):
    """Mean of the samples strictly above ``var(samples, alpha)``.

    ``alpha = 0`` averages every sample; if nothing lies above the VaR (ties
    at the maximum) the VaR itself is returned.
    """
    rows, shape = _as_rows(samples)
    if _var_index(alpha, rows.shape[1]) < 0:
        # same summation order as the plain sample mean, so the two agree bit for bit
        return _unwrap(rows.mean(axis=1), shape)
    return _unwrap(sorted_statistics(np.sort(rows, axis=1), [("cvar", alpha)])[("cvar", alpha)], shape)


def _unwrap(values, shape):
    return float(values[0]) if shape == () else values.reshape(shape)


# ---------------------------------------------------------------------------
# closed forms, used as oracles


def gaussian_cvar(mu, sigma, alpha):
    """CVaR of N(mu, sigma^2) at level ``alpha < 1``."""
    z = stats.norm.ppf(alpha)
    return mu + sigma * stats.norm.pdf(z) / (1.0 - alpha)


def mixture_quantile(mix, alpha):
    """Exact (1 - alpha) upper quantile of a Gaussian mixture by root finding."""
    if alpha <= 0:
        return -math.inf
    if alpha >= 1:
        return math.inf
    lo = float(np.min(mix.means - 12 * mix.stds))
    hi = float(np.max(mix.means + 12 * mix.stds))
    return optimize.brentq(lambda x: mix.cdf(x) - alpha, lo, hi, xtol=1e-14, rtol=1e-14)


def mixture_cvar(mix, alpha):
    """Exact CVaR of a Gaussian mixture: tail expectation beyond the quantile."""
    if alpha <= 0:
        return mix.mean()
    q = mixture_quantile(mix, alpha)
    z = (q - mix.means) / mix.stds
    tail = mix.weights @ (mix.means * special.ndtr(-z) + mix.stds * stats.norm.pdf(z))
    return float(tail / (1.0 - alpha))
