"""Path execution against hidden slip ground truth and metric aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import DataError, ParameterError
from .planner import PlanningGraph, astar, build_cost_maps, class_predictions, edge_geometry
from .terrain import NEIGHBORS, pitch_at_edge, sample_slip

START_M = (8.0, 8.0)
GOAL_M = (88.0, 88.0)
U_REF = 0.1


@dataclass(frozen=True)
class Method:
    model: str  # "sgp" | "mgp"
    metric: str  # "ev" | "var" | "cvar"
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", self.model.lower())
        object.__setattr__(self, "metric", self.metric.lower())
        if self.model not in ("sgp", "mgp") or self.metric not in ("ev", "var", "cvar"):
            raise ParameterError(f"unknown method {self.model}+{self.metric}")
        if self.metric == "ev":
            object.__setattr__(self, "alpha", None)
        elif self.alpha is None or not (0.0 <= self.alpha <= 1.0):
            raise ParameterError(f"{self.label} needs alpha in [0, 1]")

    @property
    def label(self):
        return f"{self.model.upper()}+{ {'ev': 'EV', 'var': 'VaR', 'cvar': 'CVaR'}[self.metric] }"

    @property
    def spec(self):
        return (self.metric, self.alpha)

    @classmethod
    def parse(cls, text, alpha=None):
        """``"mgp+cvar"`` -> Method; ``alpha`` applies to VaR/CVaR."""
        try:
            model, metric = text.strip().lower().split("+")
        except ValueError:
            raise ParameterError(f"method must look like 'mgp+cvar', got {text!r}") from None
        return cls(model, metric, None if metric == "ev" else alpha)


def table_methods(alpha=0.99):
    """The six planners compared per dataset."""
    return [Method(m, k, alpha) for m in ("sgp", "mgp") for k in ("ev", "var", "cvar")]


# ---------------------------------------------------------------------------
# execution


@dataclass
class ExecutionResult:
    per_edge_slips: list
    success: bool
    failure_position: tuple | None
    total_time: float  # seconds; nan unless success
    max_slip_pct: float
    failure_edge: int | None = None


def _check_path(instance, path):
    hm = instance.heightmap
    if not path.vertices:
        raise DataError("empty path")
    for r, c in path.vertices:
        if not (0 <= r < hm.height and 0 <= c < hm.width):
            raise DataError(f"path vertex {(r, c)} is outside the map")
    for (a, b) in path.edges():
        if (b[0] - a[0], b[1] - a[1]) not in NEIGHBORS:
            raise DataError(f"path step {a} -> {b} is not an 8-neighbour move")


def edge_stream(seed, instance_seed, edge, width):
    """Execution noise stream of one directed edge, independent of the planner."""
    (r, c), (r2, c2) = edge
    d = NEIGHBORS.index((r2 - r, c2 - c))
    return rngmod.stream(seed, rngmod.EXECUTION, instance_seed, r * width + c, d)


def execute_path(instance, path, u_ref=U_REF, seed=0, slip_sampler=sample_slip):
    """Drive ``path`` with noisy ground-truth slips.

    Stops at the first edge whose slip reaches +-1 (immobilisation or loss of
    control).  Otherwise accumulates the travel time implied by the slips
    actually experienced.
    """
    _check_path(instance, path)
    hm = instance.heightmap
    slips, total = [], 0.0
    for i, edge in enumerate(path.edges()):
        s = float(slip_sampler(instance, edge, edge_stream(seed, instance.seed, edge, hm.width)))
        slips.append(s)
        if s >= 1.0 or s <= -1.0:
            return ExecutionResult(slips, False, tuple(edge[0]), math.nan, 100.0 * max(slips), i)
        phi = pitch_at_edge(hm, *edge)
        rise = float(hm.elevation[edge[1]]) - float(hm.elevation[edge[0]])
        run = hm.resolution * math.hypot(edge[1][0] - edge[0][0], edge[1][1] - edge[0][1])
        u = (1.0 - s) * u_ref if phi >= 0 else u_ref / (1.0 + s)
        total += math.hypot(run, rise) / u
    return ExecutionResult(slips, True, None, total, 100.0 * max(slips) if slips else 0.0)


# ---------------------------------------------------------------------------
# per-instance evaluation


def cell_of(position_m, resolution=1.0):
    x, y = position_m
    return (int(round(y / resolution)), int(round(x / resolution)))


@dataclass
class RunSettings:
    risk_config: object
    u_ref: float = U_REF
    heuristic: str = "zero"
    exec_seed: int = 0
    start: tuple = START_M
    goal: tuple = GOAL_M


def evaluate_instance(instance, gp_models, likelihoods, methods, settings, keep_paths=False):
    """Plan and execute every method on one instance; one result row each."""
    hm = instance.heightmap
    geometry = edge_geometry(hm)
    preds = class_predictions(geometry, gp_models, likelihoods.num_classes)
    start, goal = cell_of(settings.start, hm.resolution), cell_of(settings.goal, hm.resolution)
    rows, paths = [], {}
    for model in ("sgp", "mgp"):
        chosen = [m for m in methods if m.model == model]
        if not chosen:
            continue
        specs = list(dict.fromkeys(m.spec for m in chosen))
        maps = build_cost_maps(hm, likelihoods, gp_models, settings.risk_config, specs, u_ref=settings.u_ref,
                               model=model, stream_key=instance.seed, geometry=geometry, predictions=preds)
        for m in chosen:
            path = astar(PlanningGraph(hm, maps[m.spec]), start, goal, settings.heuristic)
            row = {
                "dataset": instance.kind,
                "instance": instance.name,
                "method": m.label,
                "alpha": "" if m.alpha is None else m.alpha,
                "solved": path is not None,
                "success": False,
                "total_time_s": math.nan,
                "max_slip_pct": math.nan,
                "planned_cost_s": math.nan,
                "path_edges": 0,
                "failure_edge": "",
            }
            if path is not None:
                res = execute_path(instance, path, settings.u_ref, settings.exec_seed)
                row.update(success=res.success, total_time_s=res.total_time, max_slip_pct=res.max_slip_pct,
                           planned_cost_s=path.total_cost, path_edges=len(path.vertices) - 1,
                           failure_edge="" if res.failure_edge is None else res.failure_edge)
            rows.append(row)
            if keep_paths:
                paths[(m.label, m.alpha)] = path
    return (rows, paths) if keep_paths else rows


def _evaluate_one(args):
    instance, gp_models, classify, methods, settings = args
    return evaluate_instance(instance, gp_models, classify(instance), methods, settings)


def worker_count():
    env = os.environ.get("TERRA_RISK_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            raise ParameterError(f"TERRA_RISK_THREADS must be an integer, got {env!r}") from None
    return cap


def evaluate_suite(instances, gp_models, methods, settings, classify, workers=None, progress=None):
    """Evaluate ``methods`` on every instance; rows come back in instance order.

    ``gp_models`` maps dataset kind to ``{class_id: GPModel}`` or is a single
    such dict.  ``classify(instance)`` returns its likelihood map.
    """
    if not methods:
        raise ParameterError("need at least one method")
    jobs = []
    for inst in instances:
        models = gp_models[inst.kind] if inst.kind in gp_models else gp_models
        jobs.append((inst, models, classify, methods, settings))
    workers = worker_count() if workers is None else workers
    rows = []
    if workers <= 1 or len(jobs) <= 1:
        for j, job in enumerate(jobs):
            rows.extend(_evaluate_one(job))
            if progress:
                progress(j + 1, len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for j, r in enumerate(pool.map(_evaluate_one, jobs)):
                rows.extend(r)
                if progress:
                    progress(j + 1, len(jobs))
    return rows, summarize(rows)


def alpha_sweep(instances, gp_models, alphas, settings, classify, workers=None, progress=None):
    """MGP+CVaR at each alpha; all levels share one set of Monte-Carlo blocks."""
    if not alphas or any(not (0.0 <= a <= 1.0) for a in alphas):
        raise ParameterError("alphas must be a non-empty subset of [0, 1]")
    methods = [Method("mgp", "cvar", float(a)) for a in alphas]
    return evaluate_suite(instances, gp_models, methods, settings, classify, workers, progress)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MetricsSummary:
    dataset: str
    method: str
    alpha: float | None
    n_instances: int
    solved_rate_pct: float
    success_rate_pct: float
    total_time_mean_min: float | None
    total_time_std_min: float | None
    max_slip_mean_pct: float | None
    max_slip_std_pct: float | None
    extra: dict = field(default_factory=dict)


def _mean_std(values):
    if not values:
        return None, None
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def summarize(rows):
    """Table-style aggregates per (dataset, method, alpha).

    Total time is averaged over successful runs only; maximum slip over every
    executed (solved) run, failures included.  Standard deviations are
    population (ddof=0).
    """
    groups = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["method"], r["alpha"]), []).append(r)
    out = []
    for (dataset, method, alpha), rs in groups.items():
        n = len(rs)
        solved = [r for r in rs if r["solved"]]
        success = [r for r in solved if r["success"]]
        t_mean, t_std = _mean_std([r["total_time_s"] / 60.0 for r in success])
        s_mean, s_std = _mean_std([r["max_slip_pct"] for r in solved])
        out.append(MetricsSummary(
            dataset=dataset,
            method=method,
            alpha=None if alpha == "" else alpha,
            n_instances=n,
            solved_rate_pct=100.0 * len(solved) / n,
            success_rate_pct=100.0 * len(success) / n,
            total_time_mean_min=t_mean,
            total_time_std_min=t_std,
            max_slip_mean_pct=s_mean,
            max_slip_std_pct=s_std,
        ))
    return out


RESULT_COLUMNS = ("dataset", "instance", "method", "alpha", "solved", "success", "total_time_s", "max_slip_pct",
                  "planned_cost_s", "path_edges", "failure_edge")


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def results_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(rows, summaries, out_dir, name="summary.json"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(rows))
    table = {}
    for s in summaries:
        d = asdict(s)
        d.pop("extra")
        key = s.method if s.alpha is None else f"{s.method}@{s.alpha}"
        table.setdefault(s.dataset, {})[key] = d
    (out / name).write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return out / "results.csv", out / name


def read_results_csv(path):
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append({
                "dataset": r["dataset"],
                "instance": r["instance"],
                "method": r["method"],
                "alpha": "" if r["alpha"] == "" else float(r["alpha"]),
                "solved": r["solved"] == "1",
                "success": r["success"] == "1",
                "total_time_s": float(r["total_time_s"]) if r["total_time_s"] else math.nan,
                "max_slip_pct": float(r["max_slip_pct"]) if r["max_slip_pct"] else math.nan,
                "planned_cost_s": float(r["planned_cost_s"]) if r["planned_cost_s"] else math.nan,
                "path_edges": int(r["path_edges"]),
                "failure_edge": "" if r["failure_edge"] == "" else int(r["failure_edge"]),
            })
    return rows
