"""Adapting a frozen backbone to a task whose teacher differs only in W_O.

The desk-scale comparison for a single seed, about a minute of CPU time.
Learning rates are the ones picked on validation accuracy for each method.
Run with ``python3 demos/03_teacher_task.py``.
"""

from apla import RunConfig, train

base = {
    "model": {"image_size": 8, "patch_size": 4, "channels": 1, "d": 32, "h": 4, "L": 4, "num_classes": 4},
    "data": {"synth": {"seed": 2, "perturb": "W_O", "n_train": 2000, "n_val": 500, "n_test": 500}},
    "train": {"epochs": 30, "batch_size": 64, "throughput_iters": 2},
    "seed": 0,
}
runs = [
    ("linear probe", {"kind": "linear"}, 1e-1),
    ("APLA r=16", {"kind": "apla", "r": 16}, 1e-3),
    ("full fine-tune", {"kind": "full"}, 1e-3),
]
for label, method, lr in runs:
    raw = {**base, "method": method, "train": {**base["train"], "base_lr": lr}}
    report = train(RunConfig.from_dict(raw))
    speed = report.timing["throughput"]["train"]["images_per_second"]
    print(f"{label:<16} trainable {report.body['plan']['trainable_scalars']:>6}  "
          f"val {report.best_val_accuracy:.3f}  test {report.test_accuracy:.3f}  ({speed:.0f} img/s train)")
