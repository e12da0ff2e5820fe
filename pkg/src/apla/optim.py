"""Masked AdamW and the warm-up + cosine learning-rate schedule.

Optimizer moments are stored only for the plan's trainable scalars, laid out
flat in plan order (a column-restricted matrix contributes its ``d x r``
sub-matrix in row-major order).
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigError, ConsistencyError


@dataclass(frozen=True)
class Schedule:
    warmup_epochs: int
    total_epochs: int
    steps_per_epoch: int

    def __post_init__(self):
        if self.total_epochs > 0 and not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(
                f"warmup_epochs={self.warmup_epochs} must be below total_epochs={self.total_epochs}")
        if self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be at least 1")


def lr_at(sched, base_lr, global_step):
    """Linear ramp from 0 over the warm-up steps, then half-cosine decay to 0."""
    warm = sched.warmup_epochs * sched.steps_per_epoch
    total = sched.total_epochs * sched.steps_per_epoch
    if global_step < warm:
        return base_lr * global_step / warm
    if total <= warm:
        return base_lr
    t = min((global_step - warm) / (total - warm), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def decays(name, shape):
    """Weight decay applies to matrices only (not biases, norms, scales, tokens, positions)."""
    return len(shape) == 2 and name != "pos_embed"


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    decay_mask: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    base_lr: float = 1e-3


def init_state(plan, **hyper):
    n = plan.trainable_count()
    mask = np.concatenate([np.full(int(np.prod(shape)), decays(name, shape)) for name, shape in plan.shapes.items()]
                          ) if n else np.zeros(0, dtype=bool)
    return OptimizerState(m=np.zeros(n), v=np.zeros(n), decay_mask=mask, **hyper)


def gather(params, plan):
    """Trainable scalars of ``params`` as one flat vector in plan order."""
    parts = []
    for name, cols in plan.trainable.items():
        value = params[name]
        parts.append((value if cols is None else value[:, cols]).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _flatten_grads(grads, plan):
    if set(grads) != set(plan.trainable):
        missing = sorted(set(plan.trainable) - set(grads))
        extra = sorted(set(grads) - set(plan.trainable))
        raise ConsistencyError(f"gradient set does not match plan: missing {missing}, unexpected {extra}")
    parts = []
    for name, shape in plan.shapes.items():
        g = grads[name]
        if g.shape != tuple(shape):
            raise ConsistencyError(f"gradient for {name} has shape {g.shape}, plan expects {tuple(shape)}")
        parts.append(g.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def adamw_step(params, grads, state, lr, plan):
    """One decoupled-weight-decay Adam update of the trainable scalars, in place.

    Scalars outside the plan are never written.
    """
    g = _flatten_grads(grads, plan)
    if g.size != state.m.size:
        raise ConsistencyError(f"optimizer state holds {state.m.size} scalars, gradients {g.size}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    theta = gather(params, plan)
    decay = np.where(state.decay_mask, state.weight_decay, 0.0)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + decay * theta)
    offset = 0
    for name, cols in plan.trainable.items():
        shape = plan.shapes[name]
        size = int(np.prod(shape))
        chunk = theta[offset:offset + size].reshape(shape)
        offset += size
        if cols is None:
            params[name] = chunk.copy()
        else:
            updated = params[name].copy()
            updated[:, cols] = chunk
            params[name] = updated
    return state
