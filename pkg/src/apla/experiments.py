"""Config-driven training runs and the study sweeps built on them.

A run is fully determined by its :class:`RunConfig`. Reports separate a
deterministic ``body`` from wall-clock ``timing`` so repeated runs can be
compared byte for byte.

Config schema (JSON)::

    {
      "model":  {ViTConfig fields},
      "method": {"kind": "apla", "r": 16, "block_range": [0, 4], "strategy": "random",
                 "k": ..., "rank": ..., "alpha": ..., "targets": [...], "which": ...},
      "data":   {"synth": {"seed": 0, "perturb": "W_O", "scale": 0.1, "tie_gap": 0.05,
                           "n_train": 2000, "n_val": 500, "n_test": 500}}
                or {"path": "dataset.bin"},
      "train":  {"epochs": 30, "batch_size": 64, "base_lr": 1e-3, "weight_decay": 0.05,
                 "warmup_epochs": 3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
                 "probe_size": 64, "throughput_iters": 2},
      "init":   null | "checkpoint.bin",
      "seed":   0,
      "out_dir": null | "runs/name",
      "sweep":  {"components": [...], "r": [...], "strategies": [...], "direction": "top_to_bottom"}
    }
"""

from concurrent.futures import ProcessPoolExecutor
import copy
import csv
from dataclasses import dataclass, field
import functools
import hashlib
import io
import json
import os
import time

import numpy as np

from .adaptation import STRATEGIES, build_plan, select_columns
from .checkpoint import checkpoint_load, checkpoint_save
from .costs import cost_model, measure_throughput
from .data import gen_teacher_task, load_dataset
from .errors import ConfigError, DataError
from .optim import Schedule, adamw_step, init_state, lr_at
from .rng import Rng, derive_seed
from .vit import (COMPONENTS, ViTConfig, accuracy, forward_features, forward_head, head_loss_and_backward,
                  init_params, loss_and_backward, predict)

_SHUFFLE_SALT = 0x5F
_INIT_SALT = 0x11

TRAIN_DEFAULTS = dict(epochs=30, batch_size=64, base_lr=1e-3, weight_decay=0.05, warmup_epochs=None,
                      beta1=0.9, beta2=0.999, eps=1e-8, probe_size=64, throughput_iters=2)
SYNTH_DEFAULTS = dict(seed=None, perturb="W_O", scale=0.1, tie_gap=0.05,
                      n_train=2000, n_val=500, n_test=500)
# rank grids searched for embedding widths 384, 768, 1024 and 1536
STANDARD_R_GRIDS = {384: [8, 16, 128, 256, 384], 768: [8, 16, 128, 512, 768],
                1024: [8, 16, 128, 512, 1024], 1536: [8, 16, 128, 1024, 1536]}


@dataclass
class RunConfig:
    model: ViTConfig
    method: dict
    data: dict
    train: dict = field(default_factory=lambda: dict(TRAIN_DEFAULTS))
    seed: int = 0
    init: str | None = None
    out_dir: str | None = None
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(raw) - {"model", "method", "data", "train", "seed", "init", "out_dir", "sweep"}
        if unknown:
            raise ConfigError(f"unknown top-level field(s): {sorted(unknown)}")
        model = ViTConfig.from_dict(_section(raw, "model"))
        method = dict(_section(raw, "method"))
        if "kind" not in method:
            raise ConfigError("method.kind is required")
        data = dict(_section(raw, "data", {"synth": {}}))
        if ("synth" in data) == ("path" in data):
            raise ConfigError("data must contain exactly one of 'synth' or 'path'")
        if "synth" in data:
            synth = dict(data["synth"] or {})
            bad = set(synth) - set(SYNTH_DEFAULTS)
            if bad:
                raise ConfigError(f"unknown data.synth field(s): {sorted(bad)}")
            data = {"synth": {**SYNTH_DEFAULTS, **synth}}
        train = dict(_section(raw, "train", {}))
        bad = set(train) - set(TRAIN_DEFAULTS)
        if bad:
            raise ConfigError(f"unknown train field(s): {sorted(bad)}")
        train = {**TRAIN_DEFAULTS, **train}
        for key in ("epochs", "batch_size", "probe_size", "throughput_iters"):
            if not isinstance(train[key], int) or train[key] < (1 if key == "batch_size" else 0):
                raise ConfigError(f"train.{key} must be a non-negative integer, got {train[key]!r}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        config = cls(model=model, method=method, data=data, train=train, seed=seed,
                     init=raw.get("init"), out_dir=raw.get("out_dir"), sweep=dict(raw.get("sweep") or {}))
        if train["epochs"] > 0:
            try:
                config.schedule(1)
            except ValueError as exc:
                raise ConfigError(f"train: {exc}") from None
        return config

    def to_dict(self):
        return {"model": self.model.to_dict(), "method": copy.deepcopy(self.method),
                "data": copy.deepcopy(self.data), "train": dict(self.train), "seed": self.seed,
                "init": self.init, "out_dir": self.out_dir, "sweep": copy.deepcopy(self.sweep)}

    def replace(self, **changes):
        raw = self.to_dict()
        for key, value in changes.items():
            if key in ("method", "train", "data", "sweep") and isinstance(value, dict):
                raw[key] = value
            else:
                raw[key] = value
        return RunConfig.from_dict(raw)

    def warmup_epochs(self):
        w = self.train["warmup_epochs"]
        return self.train["epochs"] // 10 if w is None else w

    def schedule(self, steps_per_epoch):
        return Schedule(self.warmup_epochs(), self.train["epochs"], steps_per_epoch)


def _section(raw, key, default=None):
    if key not in raw:
        if default is None:
            raise ConfigError(f"missing required section '{key}'")
        return default
    if not isinstance(raw[key], dict):
        raise ConfigError(f"section '{key}' must be an object")
    return raw[key]


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return RunConfig.from_dict(raw)


@functools.lru_cache(maxsize=8)
def _synth_cached(model_json, seed, perturb, scale, tie_gap, sizes):
    cfg = ViTConfig.from_dict(json.loads(model_json))
    return gen_teacher_task(cfg, seed, perturb, sizes, scale=scale, tie_gap=tie_gap)


def resolve_data(config):
    """``(dataset, starting params)``. Synthetic tasks start from the teacher's base model."""
    cfg = config.model
    if "synth" in config.data:
        s = config.data["synth"]
        seed = config.seed if s["seed"] is None else s["seed"]
        task, dataset = _synth_cached(json.dumps(cfg.to_dict(), sort_keys=True), seed, s["perturb"],
                                      float(s["scale"]), float(s["tie_gap"]),
                                      (s["n_train"], s["n_val"], s["n_test"]))
        base = task.base_params.copy()
    else:
        dataset = load_dataset(config.data["path"])
        shape = dataset.images.shape[1:]
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if shape != expected or dataset.num_classes != cfg.num_classes:
            raise DataError(f"dataset images {shape} / {dataset.num_classes} classes do not match "
                            f"model {expected} / {cfg.num_classes} classes")
        base = None
    if config.init is not None:
        base = checkpoint_load(config.init, cfg)
    elif base is None:
        base = init_params(cfg, Rng(derive_seed(config.seed, _INIT_SALT)))
    return dataset, base


def make_plan(config, base=None, dataset=None):
    """Build the adaptation plan, scoring columns on a probe batch for non-random strategies."""
    method = dict(config.method)
    kind = method.pop("kind")
    cfg = config.model
    if kind == "apla":
        strategy = method.get("strategy", "random")
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
        if strategy != "random" and "column_sets" not in method:
            if "r" not in method:
                raise ConfigError("method.r is required for apla")
            start, stop = method.get("block_range") or (0, cfg.L)
            x, y = dataset.split("train")
            n = config.train["probe_size"]
            method["column_sets"] = select_columns(strategy, method["r"], cfg, config.seed, base,
                                                   x[:n], y[:n], blocks=range(start, stop))
    return build_plan(kind, cfg, config.seed, **method)


_LABEL_KEYS = ("strategy",)


@dataclass
class ExperimentReport:
    """``body`` depends only on what was trained; ``labels`` names how the columns were picked."""

    body: dict
    timing: dict
    labels: dict = field(default_factory=dict)

    def body_json(self):
        return json.dumps(self.body, sort_keys=True, indent=2)

    def body_hash(self):
        return hashlib.sha256(self.body_json().encode()).hexdigest()

    @property
    def test_accuracy(self):
        return self.body["test_accuracy"]

    @property
    def best_val_accuracy(self):
        return self.body["best_val_accuracy"]

    def to_json(self):
        return json.dumps({"body": self.body, "body_sha256": self.body_hash(), "labels": self.labels,
                           "timing": self.timing}, sort_keys=True, indent=2)

    def epochs_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_accuracy", "lr"])
        for row in self.body["epochs"]:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_accuracy"]), repr(row["lr"])])
        return buf.getvalue()

    def markdown(self):
        b = self.body
        plan = b["plan"]
        cost = b["cost"]
        title = plan["kind"] + "".join(f", {k} {v}" for k, v in self.labels.items())
        lines = [f"# Run: {title}", "",
                 "| field | value |", "|---|---|",
                 f"| trainable scalars | {plan['trainable_scalars']} |",
                 f"| indices hash | `{plan['indices_hash']}` |",
                 f"| best epoch | {b['best_epoch']} |",
                 f"| best val accuracy | {_pct(b['best_val_accuracy'])} |",
                 f"| test accuracy | {_pct(b['test_accuracy'])} |",
                 f"| optimizer bytes | {cost['optimizer_bytes']} |",
                 f"| activation bytes / sample | {cost['activation_bytes_per_sample']} |"]
        for phase, sample in self.timing.get("throughput", {}).items():
            lines.append(f"| {phase} images/s | {sample['images_per_second']:.1f} |")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, params=None):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, "epochs.csv"), "w") as fh:
            fh.write(self.epochs_csv())
        with open(os.path.join(out_dir, "report.md"), "w") as fh:
            fh.write(self.markdown())
        if params is not None:
            checkpoint_save(params, os.path.join(out_dir, "checkpoint.bin"))

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        return cls(raw["body"], raw.get("timing", {}), raw.get("labels", {}))


def _pct(x):
    return "n/a" if x is None else f"{100 * x:.2f}"


def _batches(order, size):
    return [order[i:i + size] for i in range(0, len(order), size)]


class _Inputs:
    """Training inputs. With a frozen backbone, images are replaced by their head features once."""

    def __init__(self, params, cfg, plan, chunk=256):
        self.cfg = cfg
        self.plan = plan
        self.frozen = plan.backbone_count() == 0
        if self.frozen:
            base = params.copy()
            self.encode = lambda x: np.concatenate(
                [forward_features(x[i:i + chunk], base, cfg)[0] for i in range(0, len(x), chunk)]
            ) if len(x) else np.zeros((0, cfg.d))
        else:
            self.encode = lambda x: x

    def loss_and_backward(self, x, y, params):
        if self.frozen:
            return head_loss_and_backward(x, y, params, self.cfg, self.plan)
        return loss_and_backward(x, y, params, self.cfg, self.plan)

    def accuracy(self, x, y, params):
        if not self.frozen:
            return accuracy(x, y, params, self.cfg, self.plan)
        if len(y) == 0:
            return 0.0
        return float(np.mean(forward_head(x, params)[0].argmax(axis=1) == y))


def train(config, return_params=False):
    """Run one configuration end to end. Writes artefacts when ``config.out_dir`` is set."""
    started = time.perf_counter()
    cfg = config.model
    tr = config.train
    dataset, base = resolve_data(config)
    plan = make_plan(config, base, dataset)
    params = plan.attach(base)
    images, y_train = dataset.split("train")
    inputs = _Inputs(params, cfg, plan)
    x_train = inputs.encode(images)
    x_val, y_val = dataset.split("val")
    x_test, y_test = dataset.split("test")
    x_val, x_test = inputs.encode(x_val), inputs.encode(x_test)
    if len(x_train) == 0:
        raise DataError("dataset has no training split")
    steps_per_epoch = -(-len(x_train) // tr["batch_size"])
    sched = config.schedule(steps_per_epoch) if tr["epochs"] > 0 else None
    state = init_state(plan, beta1=tr["beta1"], beta2=tr["beta2"], eps=tr["eps"],
                       weight_decay=tr["weight_decay"], base_lr=tr["base_lr"])
    shuffle = Rng(derive_seed(config.seed, _SHUFFLE_SALT))
    epochs = []
    best = (None, -1.0, params)
    step = 0
    for epoch in range(1, tr["epochs"] + 1):
        order = shuffle.permutation(len(x_train))
        loss_sum = 0.0
        lr = 0.0
        for idx in _batches(order, tr["batch_size"]):
            lr = lr_at(sched, tr["base_lr"], step)
            loss, grads = inputs.loss_and_backward(x_train[idx], y_train[idx], params)
            adamw_step(params, grads, state, lr, plan)
            loss_sum += loss * len(idx)
            step += 1
        val_acc = inputs.accuracy(x_val, y_val, params)
        epochs.append({"epoch": epoch, "train_loss": loss_sum / len(x_train), "val_accuracy": val_acc, "lr": lr})
        if val_acc > best[1]:
            best = (epoch, val_acc, params.copy())
    best_epoch, best_val, best_params = best
    test_acc = inputs.accuracy(x_test, y_test, best_params)
    run_config = {k: v for k, v in config.to_dict().items() if k not in ("out_dir", "sweep")}
    run_config["method"] = {k: v for k, v in config.method.items() if k not in _LABEL_KEYS + ("column_sets",)}
    summary = plan.summary()
    labels = {k: summary.pop(k) for k in _LABEL_KEYS if k in summary}
    body = {
        "config": run_config,
        "plan": summary,
        "epochs": epochs,
        "best_epoch": best_epoch,
        "best_val_accuracy": None if best_epoch is None else best_val,
        "test_accuracy": test_acc,
        "cost": cost_model(cfg, plan).to_dict(),
    }
    timing = {"throughput": _throughput(config, params, plan, images, y_train)}
    timing["wall_seconds"] = time.perf_counter() - started
    report = ExperimentReport(body, timing, labels)
    if config.out_dir:
        report.write(config.out_dir, best_params)
    return (report, best_params) if return_params else report


def _throughput(config, params, plan, x, y):
    iters = config.train["throughput_iters"]
    if iters < 1 or len(x) == 0:
        return {}
    batch = min(config.train["batch_size"], len(x))
    xb, yb = x[:batch], y[:batch]
    cfg = config.model
    trial = params.copy()
    return {
        "train": measure_throughput(lambda: loss_and_backward(xb, yb, trial, cfg, plan), 1, iters,
                                    batch, "train").to_dict(),
        "inference": measure_throughput(lambda: predict(xb, trial, cfg, plan), 1, iters,
                                        batch, "inference").to_dict(),
    }


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepTable:
    title: str
    columns: list
    rows: list
    notes: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_cell(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_markdown(self):
        lines = [f"## {self.title}", "", "| " + " | ".join(self.columns) + " |",
                 "|" + "---|" * len(self.columns)]
        for row in self.rows:
            lines.append("| " + " | ".join(_md_cell(c, row.get(c)) for c in self.columns) + " |")
        if self.notes:
            lines.append("")
            lines.extend(f"- {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {"title": self.title, "columns": self.columns, "rows": self.rows, "notes": self.notes}

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "table.csv"), "w") as fh:
            fh.write(self.to_csv())
        with open(os.path.join(out_dir, "table.md"), "w") as fh:
            fh.write(self.to_markdown())
        with open(os.path.join(out_dir, "table.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def column(self, name):
        return [row[name] for row in self.rows]


def _cell(value):
    return repr(value) if isinstance(value, float) else ("" if value is None else value)


def _md_cell(column, value):
    if isinstance(value, float) and "acc" in column:
        return _pct(value)
    return str(_cell(value))


def _run_row(config):
    return train(config)


def run_rows(configs, jobs=1):
    """Train each config; rows are independent, so ``jobs > 1`` uses worker processes."""
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_row, configs))
    return [train(c) for c in configs]


def _row_config(config, method, label):
    out = None if config.out_dir is None else os.path.join(config.out_dir, "rows", label)
    return config.replace(method=method, out_dir=out)


def _finish(table, config):
    if config.out_dir:
        table.write(config.out_dir)
    return table


def _accuracy_row(label_key, label, report):
    return {label_key: label, "trainable_scalars": report.body["plan"]["trainable_scalars"],
            "best_val_accuracy": report.best_val_accuracy, "test_accuracy": report.test_accuracy,
            "indices_hash": report.body["plan"]["indices_hash"], "body_sha256": report.body_hash()}


def ablate_components(config, components, jobs=1, include_full=True):
    """One run per component plus a ``full`` row, everything else shared."""
    if not components:
        raise ConfigError("component list is empty")
    components = ["full" if c.lower() == "full" else c for c in components]
    if include_full and "full" not in components:
        components = components + ["full"]
    methods = []
    for name in components:
        if name == "full":
            methods.append({"kind": "full"})
        elif name in COMPONENTS:
            methods.append({"kind": "component", "which": name})
        else:
            raise ConfigError(f"unknown component {name!r}; valid names: {', '.join(COMPONENTS + ('full',))}")
    reports = run_rows([_row_config(config, m, n) for m, n in zip(methods, components)], jobs)
    rows = [_accuracy_row("component", n, r) for n, r in zip(components, reports)]
    table = SweepTable("Component study: one component trained at a time (plus head)",
                       ["component", "trainable_scalars", "best_val_accuracy", "test_accuracy"], rows)
    return _finish(table, config)


def check_r_values(r_values, d):
    if not r_values:
        raise ConfigError("r list is empty")
    for r in r_values:
        if not isinstance(r, int) or isinstance(r, bool) or not 1 <= r <= d:
            raise ConfigError(f"r={r!r} must be an integer in [1, d={d}]")
    return list(r_values)


def sweep_rank(config, r_values, jobs=1):
    """APLA at each r with shared seed; cost columns come from the cost model."""
    r_values = check_r_values(r_values, config.model.d)
    base_method = {k: v for k, v in config.method.items() if k not in ("kind", "r", "column_sets")}
    methods = [{**base_method, "kind": "apla", "r": r} for r in r_values]
    reports = run_rows([_row_config(config, m, f"r{r}") for m, r in zip(methods, r_values)], jobs)
    rows = []
    for r, rep in zip(r_values, reports):
        row = _accuracy_row("r", r, rep)
        cost = rep.body["cost"]
        row["optimizer_bytes"] = cost["optimizer_bytes"]
        row["activation_bytes_per_sample"] = cost["activation_bytes_per_sample"]
        rows.append(row)
    best = max(range(len(rows)), key=lambda i: (rows[i]["best_val_accuracy"] or 0.0, -i))
    for i, row in enumerate(rows):
        row["selected"] = "*" if i == best else ""
    table = SweepTable("APLA rank sweep", ["r", "trainable_scalars", "optimizer_bytes",
                                           "activation_bytes_per_sample", "best_val_accuracy",
                                           "test_accuracy", "selected"], rows,
                       [f"r = {rows[best]['r']} has the best validation accuracy"])
    return _finish(table, config)


def ablate_selection(config, strategies, jobs=1):
    """APLA with each column-selection strategy, everything else identical."""
    if not strategies:
        raise ConfigError("strategy list is empty")
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; valid: {', '.join(STRATEGIES)}")
    if "r" not in config.method:
        raise ConfigError("method.r is required for the selection study")
    base_method = {k: v for k, v in config.method.items() if k not in ("kind", "strategy", "column_sets")}
    methods = [{**base_method, "kind": "apla", "strategy": s} for s in strategies]
    reports = run_rows([_row_config(config, m, s) for m, s in zip(methods, strategies)], jobs)
    rows = [_accuracy_row("strategy", s, r) for s, r in zip(strategies, reports)]
    accs = [r["test_accuracy"] for r in rows]
    notes = [f"test accuracy spread (max - min): {100 * (max(accs) - min(accs)):.2f} points"]
    table = SweepTable("Column-selection strategies", ["strategy", "trainable_scalars", "best_val_accuracy",
                                                       "test_accuracy", "indices_hash"], rows, notes)
    return _finish(table, config)


DIRECTIONS = ("bottom_to_top", "top_to_bottom")


def block_ranges(n_blocks, direction):
    if direction == "bottom_to_top":
        return [(0, k) for k in range(1, n_blocks + 1)]
    if direction == "top_to_bottom":
        return [(n_blocks - k, n_blocks) for k in range(1, n_blocks + 1)]
    raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def sweep_blocks(config, direction, jobs=1):
    """APLA applied to 1..L blocks, growing from the bottom or the top."""
    if "r" not in config.method:
        raise ConfigError("method.r is required for the block sweep")
    ranges = block_ranges(config.model.L, direction)
    base_method = {k: v for k, v in config.method.items() if k not in ("kind", "block_range", "column_sets")}
    methods = [{**base_method, "kind": "apla", "block_range": list(br)} for br in ranges]
    reports = run_rows([_row_config(config, m, f"blocks{br[0]}-{br[1]}") for m, br in zip(methods, ranges)], jobs)
    rows = []
    for (start, stop), rep in zip(ranges, reports):
        row = _accuracy_row("blocks", stop - start, rep)
        row["block_range"] = f"{start}-{stop}"
        rows.append(row)
    accs = [r["test_accuracy"] for r in rows]
    monotone = all(b >= a for a, b in zip(accs, accs[1:]))
    table = SweepTable(f"APLA on an increasing number of blocks ({direction})",
                       ["blocks", "block_range", "trainable_scalars", "best_val_accuracy", "test_accuracy"], rows,
                       [f"monotone non-decreasing test accuracy: {'yes' if monotone else 'no'} (advisory)"])
    return _finish(table, config)
