"""Training-cost accounting: trainable scalars, modelled memory, measured throughput.

Memory is modelled from the plan rather than read from an allocator. The
activation term counts the float64 values the reverse pass actually reads
for one sample; stages below the shallowest trainable parameter cache nothing.
"""

from dataclasses import asdict, dataclass
import math
import statistics
import time

from .vit import param_depth, param_shapes

BYTES_PER_SCALAR = 8


@dataclass(frozen=True)
class CostModel:
    trainable_scalars: int
    backbone_trainable_scalars: int
    total_scalars: int
    weight_bytes: int
    grad_bytes: int
    optimizer_bytes: int
    activation_bytes_per_sample: int
    bytes_per_scalar: int = BYTES_PER_SCALAR

    def training_bytes(self, batch):
        return (self.weight_bytes + self.grad_bytes + self.optimizer_bytes
                + self.activation_bytes_per_sample * batch)

    def to_dict(self):
        return asdict(self)


def activation_scalars(cfg, plan):
    """Per-sample count of cached activation values the backward pass needs under ``plan``."""
    names = set(plan.trainable)
    if not names:
        return 0
    floor = min(param_depth(n, cfg) for n in names)
    t, d, hid, n = cfg.tokens, cfg.d, cfg.hidden, cfg.n_patches

    def below(depth):
        return floor < depth

    def any_of(*suffixes, prefix=""):
        return any(prefix + s in names for s in suffixes)

    total = 0
    if "patch_embed.weight" in names:
        total += n * cfg.patch_dim
    lora_rank = plan.options.get("rank", 0) if plan.kind == "lora" else 0
    for l in range(cfg.L):
        p = f"blocks.{l}."
        base = 1 + 8 * l
        if below(base + 1):
            total += t * d + t
        qkv_weights = ("attn.W_Q", "attn.W_K", "attn.W_V",
                       "attn.lora_Q.A", "attn.lora_K.A", "attn.lora_V.A")
        if any_of(*qkv_weights, prefix=p):
            total += t * d
        for x in "QKV":
            if p + f"attn.lora_{x}.B" in names:
                total += t * lora_rank
        if below(base + 2):
            total += 3 * t * d + cfg.h * t * t
        if any_of("attn.W_O", "attn.lora_O.A", prefix=p):
            total += t * d
        if p + "attn.lora_O.B" in names:
            total += t * lora_rank
        if p + "ls1" in names:
            total += t * d
        if below(base + 5):
            total += t * d + t
        if p + "mlp.W_FC1" in names:
            total += t * d
        if below(base + 6):
            total += 2 * t * hid
        if p + "mlp.W_FC2" in names:
            total += t * hid
        if p + "ls2" in names:
            total += t * d
    head_layers = sum(1 for e in plan.extras if e.startswith("head_mlp.") and e.endswith(".weight"))
    if below(2 + 8 * cfg.L):
        total += d + 1
    for i in range(head_layers):
        if f"head_mlp.{i}.weight" in names:
            total += d
        if below(3 + 8 * cfg.L + i):
            total += d
    if "head.W_pred" in names:
        total += d
    return total + cfg.num_classes


def cost_model(cfg, plan):
    trainable = plan.trainable_count()
    total = sum(math.prod(s) for s in param_shapes(cfg).values())
    total += sum(math.prod(s) for s in plan.extras.values())
    return CostModel(
        trainable_scalars=trainable,
        backbone_trainable_scalars=plan.backbone_count(),
        total_scalars=total,
        weight_bytes=total * BYTES_PER_SCALAR,
        grad_bytes=trainable * BYTES_PER_SCALAR,
        optimizer_bytes=2 * trainable * BYTES_PER_SCALAR,
        activation_bytes_per_sample=activation_scalars(cfg, plan) * BYTES_PER_SCALAR,
    )


@dataclass(frozen=True)
class ThroughputSample:
    images_per_second: float
    wall_seconds: float
    batch: int
    phase: str

    def to_dict(self):
        return asdict(self)


def measure_throughput(run, warmup_iters, timed_iters, batch=1, phase="train", repeats=3):
    """Time ``run()`` after untimed warm-up; the median of ``repeats`` timed loops is reported."""
    if timed_iters < 1:
        raise ValueError(f"timed_iters must be at least 1, got {timed_iters}")
    if phase not in ("train", "inference"):
        raise ValueError(f"phase must be 'train' or 'inference', got {phase!r}")
    for _ in range(warmup_iters):
        run()
    walls = []
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(timed_iters):
            run()
        walls.append(time.perf_counter() - start)
    wall = statistics.median(walls)
    return ThroughputSample(images_per_second=batch * timed_iters / wall, wall_seconds=wall,
                            batch=batch, phase=phase)
