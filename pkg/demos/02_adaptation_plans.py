"""What each adaptation method trains, and how APLA picks its W_O columns.

Run with ``python3 demos/02_adaptation_plans.py``.
"""

from apla import ViTConfig, build_plan, select_columns
from apla.costs import cost_model

cfg = ViTConfig(d=32, h=4, L=4)

methods = [
    ("full", {}),
    ("linear", {}),
    ("mlp", {"k": 3}),
    ("partial", {"k": 1}),
    ("bitfit", {}),
    ("lora", {"rank": 8}),
    ("component", {"which": "W_O"}),
    ("apla", {"r": 16}),
    ("apla", {"r": 4}),
]
print(f"{'method':<22}{'trainable':>10}{'optimizer B':>13}{'act B/sample':>14}")
for kind, opts in methods:
    plan = build_plan(kind, cfg, seed=0, **opts)
    cost = cost_model(cfg, plan)
    label = kind + "".join(f" {k}={v}" for k, v in opts.items())
    print(f"{label:<22}{plan.trainable_count():>10}{cost.optimizer_bytes:>13}{cost.activation_bytes_per_sample:>14}")

# every block gets its own random subset; the same seed always gives the same subsets
for l, cols in select_columns("random", 8, cfg, seed=0).items():
    print(f"block {l}: columns {cols}")
print("indices hash:", build_plan("apla", cfg, seed=0, r=8).indices_hash())
