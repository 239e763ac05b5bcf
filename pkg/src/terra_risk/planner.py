"""Risk-aware travel-time costs on the 8-connected grid and A* search.

Edge costs live in ``(8, H, W)`` arrays: plane ``d`` holds the cost of the
move from cell ``(r, c)`` to ``(r, c) + NEIGHBORS[d]``; off-map moves and
impassable edges are ``inf``.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
import pathlib

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, GraphError, ParameterError
from .gp import predict
from .risk import block_samples, draw_block, risk_components, sorted_statistics
from .terrain import NEIGHBORS

HEURISTICS = ("zero", "euclid_over_umax")
MODELS = ("sgp", "mgp")


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True, eq=False)
class EdgeGeometry:
    pitch: np.ndarray  # radians, (8, H, W)
    length: np.ndarray  # 3-D metres, (8, H, W)
    valid: np.ndarray  # bool, target on the map
    target_row: np.ndarray  # clipped target indices, (8, H, W)
    target_col: np.ndarray


def edge_geometry(heightmap):
    z = heightmap.elevation.astype(float)
    h, w = z.shape
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    shape = (8, h, w)
    pitch, length = np.zeros(shape), np.zeros(shape)
    valid = np.zeros(shape, dtype=bool)
    trow, tcol = np.zeros(shape, dtype=np.intp), np.zeros(shape, dtype=np.intp)
    for d, (dr, dc) in enumerate(NEIGHBORS):
        tr, tc = rr + dr, cc + dc
        valid[d] = (tr >= 0) & (tr < h) & (tc >= 0) & (tc < w)
        trow[d], tcol[d] = np.clip(tr, 0, h - 1), np.clip(tc, 0, w - 1)
        run = heightmap.resolution * math.hypot(dr, dc)
        rise = np.where(valid[d], z[trow[d], tcol[d]] - z, 0.0)
        pitch[d] = np.arctan2(rise, run)
        length[d] = np.hypot(run, rise)
    return EdgeGeometry(pitch, length, valid, trow, tcol)


# ---------------------------------------------------------------------------
# velocity and cost


def risk_velocity(s_risk, phi, u_ref):
    """Rover speed for slip ``s_risk`` on pitch ``phi``; 0 where immobilised.

    Ascending (phi >= 0): ``(1 - s) u_ref``, impassable for ``s >= 1``.
    Descending: ``u_ref / (1 + s)``, impassable for ``s <= -1``.
    """
    if u_ref <= 0:
        raise ParameterError("u_ref must be positive")
    s = np.asarray(s_risk, dtype=float)
    asc = np.asarray(phi) >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(asc, np.where(s < 1.0, (1.0 - s) * u_ref, 0.0), np.where(s > -1.0, u_ref / (1.0 + s), 0.0))
    return float(u) if u.ndim == 0 else u


def travel_time(length, velocity):
    with np.errstate(divide="ignore"):
        t = np.where(np.asarray(velocity) > 0, np.asarray(length) / np.maximum(velocity, 1e-300), np.inf)
    return float(t) if t.ndim == 0 else t


@dataclass(frozen=True, eq=False)
class ClassPredictions:
    """GP predictive moments of every class on every edge, plus at zero pitch."""

    mean: np.ndarray  # (8, H, W, C)
    var: np.ndarray
    mean0: np.ndarray  # (C,)
    var0: np.ndarray


def class_predictions(geometry, gp_models, num_classes):
    shape = geometry.pitch.shape + (num_classes,)
    mean, var = np.zeros(shape), np.ones(shape)
    mean0, var0 = np.zeros(num_classes), np.ones(num_classes)
    for c, model in gp_models.items():
        if 0 <= c < num_classes:
            mean[..., c], var[..., c] = predict(model, geometry.pitch)
            mean0[c], var0[c] = predict(model, 0.0)
    return ClassPredictions(mean, var, mean0, var0)


def _normalize_specs(specs):
    out = []
    for metric, alpha in specs:
        metric = metric.lower()
        out.append((metric, None if metric == "ev" else float(alpha)))
    return out


def _check_models(likelihoods, gp_models):
    weighted = np.flatnonzero((likelihoods.probs >= 1e-12).any(axis=(0, 1)))
    missing = [int(c) for c in weighted if int(c) not in gp_models]
    if missing:
        raise ConfigError(f"no GP model for weighted classes {missing}")


def _row_risk(geometry, preds, weights_plane, d, side, row, specs, risk_config, stream_key):
    """Slip-as-risk statistics for every edge of one (direction, side, row)."""
    phi = geometry.pitch[d, row]
    means, stds = risk_components(phi[:, None], preds.mean[d, row], preds.var[d, row], preds.mean0, preds.var0)
    g = rngmod.stream(risk_config.seed, rngmod.RISK, stream_key, d, side, row)
    u, z = draw_block(g, risk_config.mc_samples)
    samples = np.sort(block_samples(weights_plane, means, stds, u, z), axis=1)
    return sorted_statistics(samples, specs)


def _side_weights(likelihoods, geometry, d, side, row):
    if side == 0:
        return likelihoods.probs[row]
    return likelihoods.probs[geometry.target_row[d, row], geometry.target_col[d, row]]


def build_cost_maps(heightmap, likelihoods, gp_models, risk_config, specs, *, u_ref=0.1, model="mgp",
                    stream_key=0, geometry=None, predictions=None):
    """Risk-aware travel-time cost maps for each ``(metric, alpha)`` in ``specs``.

    The slip-as-risk statistic is evaluated twice per edge, once with the
    class likelihoods of each endpoint, and the two travel times averaged.
    ``model="sgp"`` collapses the likelihoods onto their argmax class first.
    Random blocks are keyed by ``(risk_config.seed, stream_key, direction,
    endpoint, row)`` and shared by the edges of that row.
    """
    if model not in MODELS:
        raise ParameterError(f"model must be one of {MODELS}")
    specs = _normalize_specs(specs)
    geometry = edge_geometry(heightmap) if geometry is None else geometry
    lik = likelihoods.one_hot_argmax() if model == "sgp" else likelihoods
    _check_models(lik, gp_models)
    preds = class_predictions(geometry, gp_models, lik.num_classes) if predictions is None else predictions
    h, w = heightmap.height, heightmap.width
    times = {s: np.zeros((2, 8, h, w)) for s in specs}
    for d in range(8):
        for side in (0, 1):
            for row in range(h):
                stats = _row_risk(geometry, preds, _side_weights(lik, geometry, d, side, row), d, side, row, specs,
                                  risk_config, stream_key)
                for s in specs:
                    vel = risk_velocity(stats[s], geometry.pitch[d, row], u_ref)
                    times[s][side, d, row] = travel_time(geometry.length[d, row], vel)
    return {s: np.where(geometry.valid, 0.5 * (t[0] + t[1]), np.inf) for s, t in times.items()}


def edge_cost(edge, heightmap, likelihoods, gp_models, risk_config, metric="cvar", *, u_ref=0.1, model="mgp",
              stream_key=0):
    """Cost in seconds of one directed edge; ``inf`` when impassable.

    Bit-identical to the matching entry of :func:`build_cost_maps`.
    """
    (r, c), (r2, c2) = edge
    dd = (r2 - r, c2 - c)
    if dd not in NEIGHBORS:
        raise GraphError(f"{edge} is not an 8-neighbour move")
    d = NEIGHBORS.index(dd)
    spec = _normalize_specs([(metric, risk_config.alpha)])[0]
    geometry = edge_geometry(heightmap)
    lik = likelihoods.one_hot_argmax() if model == "sgp" else likelihoods
    _check_models(lik, gp_models)
    preds = class_predictions(geometry, gp_models, lik.num_classes)
    t = []
    for side in (0, 1):
        stats = _row_risk(geometry, preds, _side_weights(lik, geometry, d, side, r), d, side, r, [spec], risk_config,
                          stream_key)
        vel = risk_velocity(stats[spec], geometry.pitch[d, r], u_ref)
        t.append(travel_time(geometry.length[d, r], vel)[c])
    return float(0.5 * (t[0] + t[1]))


# ---------------------------------------------------------------------------
# search


@dataclass(frozen=True, eq=False)
class PlanningGraph:
    heightmap: object
    costs: np.ndarray  # (8, H, W)

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float)
        if c.shape != (8, self.heightmap.height, self.heightmap.width):
            raise ParameterError("cost array must be (8, H, W)")
        if np.any(c <= 0):
            raise ParameterError("edge costs must be strictly positive")
        object.__setattr__(self, "costs", c)

    @property
    def shape(self):
        return self.costs.shape[1:]

    def positions(self):
        h, w = self.shape
        res = self.heightmap.resolution
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        return np.stack([cc * res, rr * res, self.heightmap.elevation.astype(float)], axis=-1)


@dataclass
class Path:
    vertices: list
    edge_costs: list = field(default_factory=list)

    @property
    def total_cost(self):
        total = 0.0
        for c in self.edge_costs:
            total += c
        return total

    def edges(self):
        return list(zip(self.vertices[:-1], self.vertices[1:]))

    def to_dict(self):
        return {
            "vertices": [list(map(int, v)) for v in self.vertices],
            "edge_costs": list(self.edge_costs),
            "total_cost": self.total_cost,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([tuple(v) for v in d["vertices"]], [float(c) for c in d["edge_costs"]])


def _heuristic(graph, goal, mode):
    h, w = graph.shape
    if mode == "zero":
        return [0.0] * (h * w)
    if mode != "euclid_over_umax":
        raise ParameterError(f"heuristic must be one of {HEURISTICS}")
    geometry_len = edge_geometry(graph.heightmap).length
    finite = np.isfinite(graph.costs)
    if not finite.any():
        return [0.0] * (h * w)
    # fastest effective speed over the map bounds every edge's time from below
    u_max = float(np.max(geometry_len[finite] / graph.costs[finite]))
    pos = graph.positions().reshape(-1, 3)
    dist = np.linalg.norm(pos - pos[goal[0] * w + goal[1]], axis=1)
    return (dist / u_max).tolist()


def astar(graph, start, goal, heuristic="zero"):
    """Minimum-cost path from ``start`` to ``goal``, or ``None`` if unreachable.

    Ties are broken on (f, h, vertex index).  Nodes are reopened when a
    cheaper route appears, so the result is optimal for any admissible
    heuristic.
    """
    h_, w_ = graph.shape
    for cell in (start, goal):
        if not (0 <= cell[0] < h_ and 0 <= cell[1] < w_):
            raise GraphError(f"cell {cell} outside the map")
    start_i, goal_i = start[0] * w_ + start[1], goal[0] * w_ + goal[1]
    hv = _heuristic(graph, goal, heuristic)
    cost = graph.costs.reshape(8, -1).tolist()
    steps = [dr * w_ + dc for dr, dc in NEIGHBORS]
    n = h_ * w_
    g = [math.inf] * n
    parent = [-1] * n
    via = [-1] * n
    g[start_i] = 0.0
    heap = [(hv[start_i], hv[start_i], start_i, 0.0)]
    while heap:
        _, _, v, gv = heapq.heappop(heap)
        if gv > g[v]:
            continue
        if v == goal_i:
            break
        for d in range(8):
            c = cost[d][v]
            if c == math.inf:
                continue
            u = v + steps[d]
            ng = gv + c
            if ng < g[u]:
                g[u] = ng
                parent[u] = v
                via[u] = d
                heapq.heappush(heap, (ng + hv[u], hv[u], u, ng))
    if g[goal_i] == math.inf:
        return None
    order = [goal_i]
    while order[-1] != start_i:
        order.append(parent[order[-1]])
    order.reverse()
    vertices = [divmod(v, w_) for v in order]
    edge_costs = [cost[via[b]][a] for a, b in zip(order[:-1], order[1:])]
    return Path(vertices, edge_costs)


# ---------------------------------------------------------------------------
# export


def save_cost_map(costs, path):
    """Eight little-endian float32 planes, one per neighbour direction."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(costs).astype("<f4").tofile(path)
    return path


def save_path(path_obj, filename, **extra):
    record = dict(extra)
    record.update(path_obj.to_dict() if path_obj is not None else {"vertices": None})
    pathlib.Path(filename).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
