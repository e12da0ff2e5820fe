"""Rank sweep and selection-strategy table on a small task, rendered as markdown.

Run with ``python3 demos/04_sweeps.py``; tables are also written under ``demo_runs/``.
"""

from apla import RunConfig, ablate_selection, sweep_rank

config = RunConfig.from_dict({
    "model": {"image_size": 8, "patch_size": 4, "channels": 1, "d": 32, "h": 4, "L": 4, "num_classes": 4},
    "method": {"kind": "apla", "r": 8},
    "data": {"synth": {"seed": 2, "n_train": 256, "n_val": 128, "n_test": 128}},
    "train": {"epochs": 4, "batch_size": 64, "base_lr": 1e-3, "throughput_iters": 0},
    "seed": 0,
    "out_dir": "demo_runs/rank",
})
print(sweep_rank(config, [1, 4, 16, 32]).to_markdown())
print(ablate_selection(config.replace(out_dir="demo_runs/selection"),
                       ["random", "gradient", "activation", "magnitude"]).to_markdown())
