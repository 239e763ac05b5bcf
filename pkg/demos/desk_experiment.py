"""
Desk-scale table and alpha sweep
================================

The full pipeline at desk scale, through the same stage functions the CLI
uses.  Takes several minutes on one core; set TERRA_RISK_THREADS to use
more.  Equivalent shell session::

    terra-risk gen-dataset --out runs/desk
    terra-risk train       --out runs/desk
    terra-risk evaluate    --out runs/desk
    terra-risk sweep-alpha --out runs/desk
"""

# %%
import json
import sys
from pathlib import Path

from terra_risk import cli
from terra_risk.config import default_config

cfg = default_config()
root = Path(sys.argv[1] if len(sys.argv) > 1 else cfg.out)

cli.gen_dataset(cfg, root, force=True)
cli.train(cfg, root, force=True)
cli.evaluate(cfg, root, cfg.method_list(), force=True)
cli.sweep_alpha(cfg, root, cfg.evaluation.alphas, force=True)

# %%
# Success rate, solved rate and mean drive time per method.

table = json.loads((root / "evaluate" / "summary.json").read_text())
for dataset, methods in table.items():
    print(dataset)
    for name, s in methods.items():
        t = s["total_time_mean_min"]
        print(f"  {name:9s} success {s['success_rate_pct']:5.1f}%  solved {s['solved_rate_pct']:5.1f}%"
              f"  T {'-' if t is None else f'{t:.1f}'} min")

# %%
# The sweep trades drive time for safety as alpha grows.

sweep = json.loads((root / "sweep" / "summary.json").read_text())
for name, s in sweep["aa"].items():
    print(f"{name:14s} success {s['success_rate_pct']:5.1f}%  T {s['total_time_mean_min']} min")
