"""Adaptation plans: which parameters, and which columns, receive gradients.

A plan is immutable and built from ``(kind, cfg, seed, options)`` alone.
Its ``trainable`` mapping drives the model's reverse pass and the optimizer:
``name -> None`` trains the whole tensor, ``name -> index array`` trains only
those columns of a weight matrix (APLA on ``W_O``).
"""

from dataclasses import dataclass, field
import hashlib
import json
import math
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .ops import low_rank_delta
from .rng import MASK64, Rng, derive_seed, splitmix64
from .vit import (
    COMPONENTS,
    HEAD_PARAMS,
    ViTParams,
    component_params,
    forward,
    loss_and_backward,
    param_shapes,
)

KINDS = ("full", "linear", "mlp", "partial", "bitfit", "lora", "component", "apla")
STRATEGIES = ("random", "gradient", "activation", "magnitude")
LORA_TARGETS = ("W_Q", "W_K", "W_V", "W_O")

_EXTRAS_SALT = 0xE7


class LoraFactors(NamedTuple):
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True, eq=False)
class AdaptationPlan:
    kind: str
    trainable: dict
    shapes: dict
    seed: int
    options: dict = field(default_factory=dict)
    column_sets: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    lora_scale: float | None = None

    def trainable_count(self):
        return sum(math.prod(s) for s in self.shapes.values())

    def backbone_count(self):
        return sum(math.prod(s) for n, s in self.shapes.items()
                   if n not in HEAD_PARAMS and not n.startswith("head_mlp."))

    def indices_hash(self):
        """Stable digest of the trainable names and column choices."""
        payload = [[name, None if cols is None else [int(c) for c in cols]]
                   for name, cols in self.trainable.items()]
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:16]

    def summary(self):
        out = {"kind": self.kind, **self.options,
               "trainable_scalars": self.trainable_count(),
               "indices_hash": self.indices_hash()}
        if self.column_sets:
            out["column_sets"] = {str(l): [int(c) for c in cols] for l, cols in self.column_sets.items()}
        return out

    def init_extras(self, cfg):
        """Fresh tensors for the parameters this method adds (LoRA factors, MLP head)."""
        rng = Rng(derive_seed(self.seed, _EXTRAS_SALT))
        out = {}
        for name, shape in self.extras.items():
            if name.endswith(".B") or name.endswith(".bias"):
                out[name] = np.zeros(shape)
            else:
                out[name] = rng.normal_array(shape, 1.0 / math.sqrt(cfg.d))
        return out

    def attach(self, params):
        """Copy of ``params`` with this plan's extra tensors appended (existing ones kept)."""
        merged = dict(params.tensors)
        for name, value in self.init_extras(params.cfg).items():
            merged.setdefault(name, value)
        return ViTParams(params.cfg, {k: v.copy() for k, v in merged.items()})


def sample_columns(d, r, block_index, seed):
    """Random column subset of size ``r`` for one block, sorted ascending.

    The block stream is seeded with ``SplitMix64(seed XOR block_index)`` and a
    partial Fisher-Yates pass over ``0..d-1`` keeps the first ``r`` picks.
    """
    if not 1 <= r <= d:
        raise ConfigError(f"r={r} must lie in [1, d={d}]")
    _, block_seed = splitmix64((int(seed) ^ int(block_index)) & MASK64)
    return sorted(Rng(block_seed).partial_shuffle(d, r))


def top_columns(scores, r):
    """Indices of the ``r`` largest scores, ties going to the lower index, sorted."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise DataError("column scores must be finite")
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:r])


@dataclass(frozen=True)
class ColumnScore:
    strategy: str
    scores: dict


def score_columns(strategy, params, probe_x, probe_y, cfg=None):
    """Per-block scores of the ``W_O`` columns used by the non-random strategies.

    ``gradient``: L2 norm of each column of dloss/dW_O on the probe batch.
    ``activation``: mean |output feature j| of the ``W_O`` projection.
    ``magnitude``: L2 norm of each column of ``W_O``.
    """
    cfg = cfg or params.cfg
    if strategy not in STRATEGIES or strategy == "random":
        raise ConfigError(f"cannot score columns with strategy {strategy!r}")
    if probe_x is None or len(probe_x) == 0:
        raise DataError("probe batch is empty")
    names = [f"blocks.{l}.attn.W_O" for l in range(cfg.L)]
    if strategy == "magnitude":
        scores = {l: np.sqrt((params[n] ** 2).sum(axis=0)) for l, n in enumerate(names)}
    elif strategy == "gradient":
        plan = build_plan("component", cfg, which="W_O")
        _, grads = loss_and_backward(probe_x, probe_y, params, cfg, plan)
        scores = {l: np.sqrt((grads[n] ** 2).sum(axis=0)) for l, n in enumerate(names)}
    else:
        _, cache = forward(probe_x, params, cfg)
        scores = {l: np.abs(attn["o"]).reshape(-1, cfg.d).mean(axis=0)
                  for l, (attn, _) in enumerate(cache["blocks"])}
    return ColumnScore(strategy, scores)


def select_columns(strategy, r, cfg, seed, params=None, probe_x=None, probe_y=None, blocks=None):
    """Column sets per block for the named selection strategy."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
    if not 1 <= r <= cfg.d:
        raise ConfigError(f"r={r} must lie in [1, d={cfg.d}]")
    blocks = range(cfg.L) if blocks is None else blocks
    if strategy == "random":
        return {l: sample_columns(cfg.d, r, l, seed) for l in blocks}
    scored = score_columns(strategy, params, probe_x, probe_y, cfg)
    return {l: top_columns(scored.scores[l], r) for l in blocks}


def lora_forward_delta(x, lora, alpha, rank):
    """Low-rank side output ``x @ A @ B * (alpha / rank)``."""
    a, b = lora
    if a.shape != (x.shape[-1], rank) or b.shape[0] != rank:
        raise DimensionError(f"LoRA factors {a.shape}, {b.shape} do not fit input width {x.shape[-1]} "
                             f"and rank {rank}")
    return low_rank_delta(x, a, b, alpha / rank)


def _positive_int(options, key, default=None):
    value = options.get(key, default)
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"method.{key} must be a positive integer, got {value!r}")
    return int(value)


def build_plan(kind, cfg, seed=0, **options):
    """Construct the plan for one method.

    ``options`` by kind: ``mlp``/``partial``: ``k``; ``lora``: ``rank``,
    ``alpha``, ``targets``; ``component``: ``which``; ``apla``: ``r``,
    ``block_range`` (start, stop), ``strategy`` label and optionally
    precomputed ``column_sets``.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown method kind {kind!r}; valid: {', '.join(KINDS)}")
    core = param_shapes(cfg)
    chosen = {}
    extras = {}
    column_sets = {}
    lora_scale = None
    opts = {}
    if kind == "full":
        chosen = dict.fromkeys(core)
    elif kind == "linear":
        pass
    elif kind == "mlp":
        k = opts["k"] = _positive_int(options, "k", 3)
        for i in range(k - 1):
            extras[f"head_mlp.{i}.weight"] = (cfg.d, cfg.d)
            extras[f"head_mlp.{i}.bias"] = (cfg.d,)
    elif kind == "partial":
        k = opts["k"] = _positive_int(options, "k", 1)
        if k > cfg.L:
            raise ConfigError(f"method.k={k} exceeds the number of blocks L={cfg.L}")
        prefixes = tuple(f"blocks.{l}." for l in range(cfg.L - k, cfg.L))
        chosen = {n: None for n in core if n.startswith(prefixes)}
    elif kind == "bitfit":
        chosen = {n: None for n in core
                  if n.endswith((".bias", ".beta")) or n.rsplit(".", 1)[-1].startswith("b_")}
    elif kind == "lora":
        rank = opts["rank"] = _positive_int(options, "rank", 8)
        if rank > cfg.d:
            raise ConfigError(f"method.rank={rank} exceeds d={cfg.d}")
        alpha = opts["alpha"] = float(options.get("alpha", rank))
        targets = opts["targets"] = list(options.get("targets", ["W_Q", "W_V"]))
        bad = [t for t in targets if t not in LORA_TARGETS]
        if bad or not targets:
            raise ConfigError(f"method.targets must be a non-empty subset of {LORA_TARGETS}, got {targets}")
        lora_scale = alpha / rank
        for l in range(cfg.L):
            for t in LORA_TARGETS:
                if t in targets:
                    x = t[-1]
                    extras[f"blocks.{l}.attn.lora_{x}.A"] = (cfg.d, rank)
                    extras[f"blocks.{l}.attn.lora_{x}.B"] = (rank, cfg.d)
    elif kind == "component":
        which = opts["which"] = options.get("which")
        if which not in COMPONENTS:
            raise ConfigError(f"unknown component {which!r}; valid names: {', '.join(COMPONENTS)}")
        chosen = dict.fromkeys(component_params(cfg, which))
    elif kind == "apla":
        if "r" not in options:
            raise ConfigError("method.r is required for apla")
        r = opts["r"] = _positive_int(options, "r")
        if r > cfg.d:
            raise ConfigError(f"method.r={r} exceeds d={cfg.d}")
        start, stop = options.get("block_range") or (0, cfg.L)
        if not 0 <= start < stop <= cfg.L:
            raise ConfigError(f"method.block_range={[start, stop]} must satisfy 0 <= start < stop <= {cfg.L}")
        opts["block_range"] = [int(start), int(stop)]
        opts["strategy"] = options.get("strategy", "random")
        given = options.get("column_sets")
        for l in range(start, stop):
            if given is None:
                cols = sample_columns(cfg.d, r, l, seed)
            else:
                cols = [int(c) for c in (given[l] if l in given else given[str(l)])]
                if len(cols) != r or sorted(set(cols)) != cols or cols[0] < 0 or cols[-1] >= cfg.d:
                    raise ConfigError(f"column set for block {l} must be {r} sorted distinct indices in [0, {cfg.d})")
            column_sets[l] = tuple(cols)
            chosen[f"blocks.{l}.attn.W_O"] = np.asarray(cols, dtype=np.int64)
    trainable, shapes = {}, {}
    for name in list(core) + list(extras):
        if name in chosen or name in extras or name in HEAD_PARAMS:
            cols = chosen.get(name)
            shape = core.get(name, extras.get(name))
            trainable[name] = cols
            shapes[name] = shape if cols is None else (shape[0], len(cols))
    return AdaptationPlan(kind=kind, trainable=trainable, shapes=shapes, seed=int(seed), options=opts,
                          column_sets=column_sets, extras=extras, lora_scale=lora_scale)
