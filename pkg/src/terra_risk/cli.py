"""Command-line pipeline: dataset generation, GP training, planning, execution.

Layout under the output root::

    datasets/<kind>/<split>/dataset.json    index, written last
    datasets/<kind>/<split>/<instance>/     rasters + manifest.json
    models/<kind>/gp_<class>.json           one file per class, models.json last
    plan/<kind>/<instance>/<method>.json    planned paths
    execute/ evaluate/ sweep/               results.csv + summary.json

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

from . import classifier, gp
from . import rng as rngmod
from . import terrain
from .config import ConfigError, load_config, validate
from .errors import DataError, FitError, ParameterError
from .evaluation import (RunSettings, alpha_sweep, cell_of, evaluate_suite, execute_path, summarize,
                         write_results)
from .planner import PlanningGraph, Path as GridPath, astar, build_cost_maps, edge_geometry, class_predictions
from .planner import save_cost_map, save_path
from .risk import RiskConfig

log = logging.getLogger("terra_risk")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATASET_INDEX = "dataset.json"
MODELS_INDEX = "models.json"


def _write_atomic(path, text):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fresh_dir(path, force):
    """Empty output directory; refuses to clobber without ``force``."""
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def dataset_dir(root, kind, split):
    return Path(root) / "datasets" / kind / split


def model_dir(root, kind):
    return Path(root) / "models" / kind


# ---------------------------------------------------------------------------
# stages


def gen_dataset(cfg, root, force=False):
    """Generate every configured dataset kind; returns the dataset directories."""
    d = cfg.dataset
    out = []
    for kind in d.kinds:
        target = dataset_dir(root, kind, d.split)
        _fresh_dir(target, force)
        insts = terrain.make_dataset(kind, d.split, cfg.seed, d.instances, n_groups=d.groups, size=d.size,
                                     roughness=d.roughness, max_pitch_deg=d.max_pitch_deg,
                                     feature_scale=d.feature_scale, sigma_base=d.sigma_base,
                                     gradient_gain=d.gradient_gain)
        for inst in insts:
            terrain.save_instance(inst, target / inst.name)
        index = {
            "format": terrain.DATASET_FORMAT,
            "kind": kind,
            "split": d.split,
            "seed": cfg.seed,
            "instances": [inst.name for inst in insts],
            "slip_models": [m.to_dict() for m in insts[0].slip_models] if insts else [],
            "generator": {k: getattr(d, k) for k in ("groups", "size", "roughness", "max_pitch_deg",
                                                     "feature_scale", "sigma_base", "gradient_gain")},
        }
        _write_atomic(target / DATASET_INDEX, json.dumps(index, indent=2, sort_keys=True) + "\n")
        log.info("wrote %d %s/%s instances to %s", len(insts), kind, d.split, target)
        out.append(target)
    return out


def read_dataset_index(directory):
    path = Path(directory) / DATASET_INDEX
    if not path.exists():
        raise DataError(f"no complete dataset at {directory} (missing {DATASET_INDEX}; run gen-dataset)")
    index = json.loads(path.read_text())
    if index.get("format") != terrain.DATASET_FORMAT:
        raise DataError(f"{path}: unsupported dataset format {index.get('format')!r}")
    return index


def load_dataset(root, kind, split, limit=None):
    directory = dataset_dir(root, kind, split)
    index = read_dataset_index(directory)
    names = index["instances"][:limit] if limit else index["instances"]
    return [terrain.load_instance(directory / n) for n in names]


def train(cfg, root, force=False):
    """Fit one GP per class per dataset kind from simulated measurements.

    Every class is attempted; the first fit failure is re-raised afterwards.
    """
    failures = []
    for k, kind in enumerate(cfg.dataset.kinds):
        index = read_dataset_index(dataset_dir(root, kind, cfg.dataset.split))
        target = _fresh_dir(model_dir(root, kind), force)
        grid = cfg.gp.grid()
        written = []
        for md in index["slip_models"]:
            truth = terrain.SlipGroundTruth.from_dict(md)
            g = rngmod.stream(cfg.seed, rngmod.TRAINING, terrain.KINDS.index(kind), truth.class_id)
            phi, s = terrain.simulate_measurements(truth, cfg.training.samples_per_class, g,
                                                   cfg.training.max_pitch_deg)
            try:
                model = gp.fit(gp.TrainingSet(phi, s, truth.class_id), grid)
            except FitError as exc:
                log.error("%s class %d: %s", kind, truth.class_id, exc)
                failures.append(exc)
                continue
            written.append(gp.save_model(model, target).name)
        if len(written) == len(index["slip_models"]):
            _write_atomic(target / MODELS_INDEX, json.dumps({"kind": kind, "files": written}, indent=2) + "\n")
        log.info("trained %d/%d %s models", len(written), len(index["slip_models"]), kind)
    if failures:
        raise failures[0]


def load_kind_models(root, kind):
    directory = model_dir(root, kind)
    if not (directory / MODELS_INDEX).exists():
        raise DataError(f"no complete model set at {directory} (run train)")
    return gp.load_models(directory)


def make_classifier(cfg, likelihood_dir=None):
    c = cfg.classifier
    if likelihood_dir is None:
        acc = {k: c.accuracy_for(k) for k in cfg.dataset.kinds}
        return _SyntheticClassifier(acc, c.smoothing, cfg.seed, c.logit_noise)
    return _FileClassifier(str(likelihood_dir))


class _SyntheticClassifier:
    # module-level class so worker processes can unpickle it
    def __init__(self, accuracy, smoothing, seed, logit_noise):
        self.accuracy = accuracy
        self.args = (smoothing, seed, logit_noise)

    def __call__(self, instance):
        return classifier.synthetic_classify(instance, self.accuracy[instance.kind], *self.args)


class _FileClassifier:
    def __init__(self, directory):
        self.directory = directory

    def __call__(self, instance):
        shape = (instance.heightmap.height, instance.heightmap.width, instance.num_classes)
        return classifier.load_likelihoods(Path(self.directory) / f"{instance.name}.f32", shape)


def settings_from(cfg, alpha=None, heuristic=None):
    r = cfg.risk
    a = r.alpha if alpha is None else alpha
    return RunSettings(
        risk_config=RiskConfig(alpha=a, mc_samples=r.mc_samples, seed=cfg.seed, shared_class=r.shared_class),
        u_ref=cfg.planner.u_ref,
        heuristic=heuristic or cfg.planner.heuristic,
        exec_seed=cfg.seed,
        start=tuple(cfg.planner.start),
        goal=tuple(cfg.planner.goal),
    )


def _file_label(method):
    label = method.label.lower().replace("+", "_")
    return label if method.alpha is None else f"{label}_a{method.alpha:g}"


def plan(cfg, root, methods, force=False, likelihood_dir=None, save_costs=False):
    """Plan every instance with every method; writes one path JSON each."""
    out = _fresh_dir(Path(root) / "plan", force)
    settings = settings_from(cfg)
    classify = make_classifier(cfg, likelihood_dir)
    for kind in cfg.dataset.kinds:
        models = load_kind_models(root, kind)
        for inst in load_dataset(root, kind, cfg.dataset.split, cfg.dataset.instances):
            hm = inst.heightmap
            lik = classify(inst)
            geometry = edge_geometry(hm)
            preds = class_predictions(geometry, models, lik.num_classes)
            start, goal = cell_of(settings.start, hm.resolution), cell_of(settings.goal, hm.resolution)
            target = out / kind / inst.name
            target.mkdir(parents=True, exist_ok=True)
            for model in ("sgp", "mgp"):
                chosen = [m for m in methods if m.model == model]
                if not chosen:
                    continue
                maps = build_cost_maps(hm, lik, models, settings.risk_config, [m.spec for m in chosen],
                                       u_ref=settings.u_ref, model=model, stream_key=inst.seed,
                                       geometry=geometry, predictions=preds)
                for m in chosen:
                    path = astar(PlanningGraph(hm, maps[m.spec]), start, goal, settings.heuristic)
                    save_path(path, target / f"{_file_label(m)}.json", method=m.label, alpha=m.alpha,
                              instance=inst.name, dataset=kind)
                    if save_costs:
                        save_cost_map(maps[m.spec], target / f"{_file_label(m)}.cost.f32")
        log.info("planned %s", kind)
    index = {"methods": [m.label for m in methods], "files": [f"{_file_label(m)}.json" for m in methods]}
    _write_atomic(out / "plan.json", json.dumps(index, indent=2) + "\n")
    return out


def execute(cfg, root, force=False):
    """Execute every stored plan against the hidden slip ground truth."""
    plan_root = Path(root) / "plan"
    if not (plan_root / "plan.json").exists():
        raise DataError(f"no complete plan set at {plan_root} (run plan)")
    files = json.loads((plan_root / "plan.json").read_text())["files"]
    out = _fresh_dir(Path(root) / "execute", force)
    rows = []
    for kind in cfg.dataset.kinds:
        for inst in load_dataset(root, kind, cfg.dataset.split, cfg.dataset.instances):
            for name in files:
                f = plan_root / kind / inst.name / name
                if not f.exists():
                    raise DataError(f"missing plan {f}")
                rec = json.loads(f.read_text())
                row = {"dataset": kind, "instance": inst.name, "method": rec["method"],
                       "alpha": "" if rec["alpha"] is None else rec["alpha"], "solved": rec["vertices"] is not None,
                       "success": False, "total_time_s": float("nan"), "max_slip_pct": float("nan"),
                       "planned_cost_s": float("nan"), "path_edges": 0, "failure_edge": ""}
                if row["solved"]:
                    path = GridPath.from_dict(rec)
                    res = execute_path(inst, path, cfg.planner.u_ref, cfg.seed)
                    row.update(success=res.success, total_time_s=res.total_time, max_slip_pct=res.max_slip_pct,
                               planned_cost_s=path.total_cost, path_edges=len(path.vertices) - 1,
                               failure_edge="" if res.failure_edge is None else res.failure_edge)
                rows.append(row)
    write_results(rows, summarize(rows), out)
    return out


def _progress(label):
    t0 = time.perf_counter()

    def report(done, total):
        log.info("%s: %d/%d instances (%.0f s)", label, done, total, time.perf_counter() - t0)

    return report


def evaluate(cfg, root, methods, force=False, likelihood_dir=None, heuristic=None):
    """Plan and execute every method on every instance, then summarize per method."""
    out = _fresh_dir(Path(root) / "evaluate", force)
    classify = make_classifier(cfg, likelihood_dir)
    all_rows = []
    for kind in cfg.dataset.kinds:
        models = load_kind_models(root, kind)
        insts = load_dataset(root, kind, cfg.dataset.split, cfg.dataset.instances)
        rows, _ = evaluate_suite(insts, models, methods, settings_from(cfg, heuristic=heuristic), classify,
                                 progress=_progress(f"evaluate {kind}"))
        all_rows.extend(rows)
    write_results(all_rows, summarize(all_rows), out)
    return out


def sweep_alpha(cfg, root, alphas, force=False, likelihood_dir=None, heuristic=None, kinds=None):
    """MGP+CVaR at each alpha (the AA dataset by default)."""
    out = _fresh_dir(Path(root) / "sweep", force)
    classify = make_classifier(cfg, likelihood_dir)
    kinds = kinds or (["aa"] if "aa" in cfg.dataset.kinds else cfg.dataset.kinds)
    all_rows = []
    for kind in kinds:
        models = load_kind_models(root, kind)
        insts = load_dataset(root, kind, cfg.dataset.split, cfg.dataset.instances)
        rows, _ = alpha_sweep(insts, models, alphas, settings_from(cfg, heuristic=heuristic), classify,
                              progress=_progress(f"sweep {kind}"))
        all_rows.extend(rows)
    write_results(all_rows, summarize(all_rows), out)
    return out


# ---------------------------------------------------------------------------
# argument handling


def _csv_list(text, conv=str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [conv(t) for t in items]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r}: {exc}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (default: packaged desk-scale config)")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty stage directory")
    common.add_argument("--kind", help="comma-separated dataset kinds (std, es, aa)")
    common.add_argument("--split", help="dataset split")
    common.add_argument("--instances", type=int, help="instances per dataset kind")
    common.add_argument("-v", "--verbose", action="store_true")

    planning = argparse.ArgumentParser(add_help=False)
    planning.add_argument("--likelihoods", help="directory of <instance>.f32 likelihood rasters")
    planning.add_argument("--heuristic", choices=("zero", "euclid_over_umax"))

    p = argparse.ArgumentParser(prog="terra-risk", description="Risk-aware rover path planning experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-dataset", parents=[common], help="synthesize terrain instances")
    sub.add_parser("train", parents=[common], help="fit per-class slip GPs")
    for name, text in (("plan", "plan paths for every instance"), ("evaluate", "plan and execute; summary table")):
        sp = sub.add_parser(name, parents=[common, planning], help=text)
        sp.add_argument("--methods", help="comma-separated, e.g. sgp+ev,mgp+cvar")
        sp.add_argument("--alpha", type=float, help="risk level for VaR/CVaR")
        if name == "plan":
            sp.add_argument("--save-costs", action="store_true", help="also write cost.f32 rasters")
    sub.add_parser("execute", parents=[common], help="execute stored plans")
    sp = sub.add_parser("sweep-alpha", parents=[common, planning], help="MGP+CVaR over several alphas")
    sp.add_argument("--alphas", help="comma-separated alphas, e.g. 0,0.6,0.9,0.99")
    return p


def resolve_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    if args.kind:
        cfg.dataset.kinds = _csv_list(args.kind, str.lower)
    if args.split:
        cfg.dataset.split = args.split
    if args.instances is not None:
        cfg.dataset.instances = args.instances
    if getattr(args, "alpha", None) is not None:
        cfg.risk.alpha = args.alpha
    if getattr(args, "heuristic", None):
        cfg.planner.heuristic = args.heuristic
    if getattr(args, "methods", None) is not None:
        cfg.evaluation.methods = _csv_list(args.methods, str.lower)
    if getattr(args, "alphas", None) is not None:
        cfg.evaluation.alphas = _csv_list(args.alphas, float)
    return validate(cfg)


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    cfg = resolve_config(args)
    root = Path(cfg.out)
    lik = getattr(args, "likelihoods", None)
    if lik is not None and not Path(lik).is_dir():
        raise DataError(f"likelihood directory {lik} does not exist")
    if args.command == "gen-dataset":
        gen_dataset(cfg, root, args.force)
    elif args.command == "train":
        train(cfg, root, args.force)
    elif args.command == "plan":
        plan(cfg, root, cfg.method_list(), args.force, lik, args.save_costs)
    elif args.command == "execute":
        execute(cfg, root, args.force)
    elif args.command == "evaluate":
        evaluate(cfg, root, cfg.method_list(), args.force, lik)
    elif args.command == "sweep-alpha":
        sweep_alpha(cfg, root, cfg.evaluation.alphas, args.force, lik)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
