"""Pre-norm Vision Transformer with an analytic reverse pass.

Weights follow the ``y = x @ W + b`` convention, so column ``j`` of a weight
matrix produces output feature ``j``. Parameters live in a
:class:`ViTParams` whose key order is the fixed enumeration order used by
masks, optimizer state and checkpoints::

    patch_embed.weight, patch_embed.bias, cls_token, pos_embed,
    blocks.<l>.{ln1.gamma, ln1.beta,
                attn.W_Q, attn.b_Q, attn.W_K, attn.b_K, attn.W_V, attn.b_V,
                attn.W_O, attn.b_O, [ls1],
                ln2.gamma, ln2.beta,
                mlp.W_FC1, mlp.b_FC1, mlp.W_FC2, mlp.b_FC2, [ls2]}  for l = 0..L-1
    final_ln.gamma, final_ln.beta, head.W_pred, head.b_pred

followed by any method-specific extras (``blocks.<l>.attn.lora_<X>.A/B``,
``head_mlp.<i>.weight/bias``) in the order the adaptation plan adds them.
"""

from dataclasses import asdict, dataclass
import math

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .ops import (
    cross_entropy,
    gelu_forward,
    gelu_grad,
    layernorm_backward,
    layernorm_forward,
    linear,
    matmul,
    softmax_rows,
    softmax_rows_backward,
)

INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 8
    patch_size: int = 4
    channels: int = 1
    d: int = 32
    h: int = 4
    L: int = 4
    mlp_ratio: int = 4
    num_classes: int = 4
    use_layerscale: bool = False
    layerscale_init: float = 1e-5
    ln_eps: float = 1e-6

    def __post_init__(self):
        for name in ("image_size", "patch_size", "channels", "d", "h", "L", "mlp_ratio", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"model.image_size={self.image_size} is not divisible by patch_size={self.patch_size}")
        if self.d % self.h:
            raise ConfigError(f"model.d={self.d} is not divisible by h={self.h}")
        if not self.ln_eps > 0:
            raise ConfigError("model.ln_eps must be positive")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_patches(self):
        return self.grid ** 2

    @property
    def tokens(self):
        return self.n_patches + 1

    @property
    def d_head(self):
        return self.d // self.h

    @property
    def patch_dim(self):
        return self.patch_size ** 2 * self.channels

    @property
    def hidden(self):
        return self.mlp_ratio * self.d

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model field(s): {sorted(unknown)}")
        return cls(**data)


def param_shapes(cfg):
    """Ordered ``name -> shape`` for the core model (no method extras)."""
    d, hid = cfg.d, cfg.hidden
    shapes = {
        "patch_embed.weight": (cfg.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (cfg.tokens, d),
    }
    for l in range(cfg.L):
        p = f"blocks.{l}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        for x in "QKVO":
            shapes[p + f"attn.W_{x}"] = (d, d)
            shapes[p + f"attn.b_{x}"] = (d,)
        if cfg.use_layerscale:
            shapes[p + "ls1"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "mlp.W_FC1"] = (d, hid)
        shapes[p + "mlp.b_FC1"] = (hid,)
        shapes[p + "mlp.W_FC2"] = (hid, d)
        shapes[p + "mlp.b_FC2"] = (d,)
        if cfg.use_layerscale:
            shapes[p + "ls2"] = (d,)
    shapes["final_ln.gamma"] = (d,)
    shapes["final_ln.beta"] = (d,)
    shapes["head.W_pred"] = (d, cfg.num_classes)
    shapes["head.b_pred"] = (cfg.num_classes,)
    return shapes


def count_params(cfg):
    return sum(math.prod(s) for s in param_shapes(cfg).values())


# Model components as studied one at a time. Each maps to parameter names.
COMPONENTS = (
    "cls", "pos", "W_E", "layernorm", "layerscale",
    "W_Q", "W_K", "W_V", "W_O", "msa", "W_FC1", "W_FC2", "mlp",
)


def component_params(cfg, which):
    """Parameter names making up one component (head excluded)."""
    blocks = [f"blocks.{l}." for l in range(cfg.L)]
    if which == "cls":
        return ["cls_token"]
    if which == "pos":
        return ["pos_embed"]
    if which == "W_E":
        return ["patch_embed.weight", "patch_embed.bias"]
    if which == "layernorm":
        names = [p + f"{ln}.{v}" for p in blocks for ln in ("ln1", "ln2") for v in ("gamma", "beta")]
        return names + ["final_ln.gamma", "final_ln.beta"]
    if which == "layerscale":
        if not cfg.use_layerscale:
            raise ConfigError("component 'layerscale' needs model.use_layerscale = true")
        return [p + ls for p in blocks for ls in ("ls1", "ls2")]
    if which in ("W_Q", "W_K", "W_V", "W_O"):
        return [p + "attn." + which for p in blocks]
    if which == "msa":
        return [p + f"attn.{kind}_{x}" for p in blocks for x in "QKVO" for kind in ("W", "b")]
    if which in ("W_FC1", "W_FC2"):
        return [p + "mlp." + which for p in blocks]
    if which == "mlp":
        return [p + f"mlp.{n}" for p in blocks for n in ("W_FC1", "b_FC1", "W_FC2", "b_FC2")]
    raise ConfigError(f"unknown component {which!r}; valid names: {', '.join(COMPONENTS)}")


HEAD_PARAMS = ("head.W_pred", "head.b_pred")

_STAGE = {
    "ln1": 0, "attn.W_Q": 1, "attn.b_Q": 1, "attn.W_K": 1, "attn.b_K": 1,
    "attn.W_V": 1, "attn.b_V": 1, "attn.lora_Q": 1, "attn.lora_K": 1, "attn.lora_V": 1,
    "attn.W_O": 2, "attn.b_O": 2, "attn.lora_O": 2, "ls1": 3,
    "ln2": 4, "mlp.W_FC1": 5, "mlp.b_FC1": 5, "mlp.W_FC2": 6, "mlp.b_FC2": 6, "ls2": 7,
}
_HEAD_DEPTH = 10 ** 6


def param_depth(name, cfg):
    """Position of a parameter along the forward pass (embedding = 0).

    Backprop stops below the shallowest trainable parameter, so this ordering
    decides which stages need input gradients and cached activations.
    """
    if name.startswith(("patch_embed.", "cls_token", "pos_embed")):
        return 0
    if name.startswith("blocks."):
        _, l, rest = name.split(".", 2)
        for key, stage in _STAGE.items():
            if rest == key or rest.startswith(key + "."):
                return 1 + 8 * int(l) + stage
        raise KeyError(name)
    if name.startswith("final_ln."):
        return 1 + 8 * cfg.L
    if name.startswith("head_mlp."):
        return 2 + 8 * cfg.L + int(name.split(".")[1])
    if name.startswith("head."):
        return _HEAD_DEPTH
    raise KeyError(name)


class ViTParams:
    """Ordered mapping of parameter name to float64 array, tied to a config."""

    def __init__(self, cfg, tensors):
        self.cfg = cfg
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def keys(self):
        return self.tensors.keys()

    def items(self):
        return self.tensors.items()

    def get(self, name, default=None):
        return self.tensors.get(name, default)

    def copy(self):
        return ViTParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def num_scalars(self):
        return sum(v.size for v in self.tensors.values())

    def block(self, l):
        prefix = f"blocks.{l}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def equals(self, other):
        """Bitwise equality of names, shapes and values."""
        if list(self.keys()) != list(other.keys()):
            return False
        return all(np.array_equal(v, other[k]) and v.shape == other[k].shape for k, v in self.items())


def init_params(cfg, rng):
    """Draw a fresh parameter set, consuming ``rng`` in enumeration order."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            tensors[name] = np.ones(shape)
        elif leaf in ("ls1", "ls2"):
            tensors[name] = np.full(shape, float(cfg.layerscale_init))
        elif leaf in ("beta", "bias") or leaf.startswith("b_"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal_array(shape, INIT_STD)
    return ViTParams(cfg, tensors)


def patchify(image, cfg):
    """``(C, S, S)`` image, or a batch ``(B, C, S, S)``, to flattened patches.

    Patches are ordered row-major over the grid; inside a patch values run
    channel-major, then row-major over pixels.
    """
    image = np.asarray(image, dtype=np.float64)
    single = image.ndim == 3
    batch = image[None] if single else image
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise DimensionError(f"patchify: expected image shape {expected}, got {image.shape}")
    b, c, g, p = batch.shape[0], cfg.channels, cfg.grid, cfg.patch_size
    out = batch.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * p * p)
    return out[0] if single else out


def _lora_scale(plan):
    return None if plan is None else getattr(plan, "lora_scale", None)


def _project(x, bp, which, lora_scale):
    """``x @ W + b`` plus an optional low-rank side path. Returns ``(y, x @ A or None)``."""
    y = linear(x, bp[f"attn.W_{which}"], bp[f"attn.b_{which}"])
    a_key = f"attn.lora_{which}.A"
    if a_key not in bp:
        return y, None
    if lora_scale is None:
        raise ConfigError("parameters carry LoRA factors but no plan with a LoRA scale was given")
    hidden = linear(x, bp[a_key])
    return y + linear(hidden, bp[f"attn.lora_{which}.B"]) * lora_scale, hidden


def _split_heads(x, h):
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3).reshape(b * h, t, d // h)


def _merge_heads(x, b):
    bh, t, dh = x.shape
    h = bh // b
    return x.reshape(b, h, t, dh).transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention_block(z_in, block_params, cfg, lora_scale=None):
    """Pre-norm multi-head self-attention sub-block with residual.

    ``z_in`` is ``(tokens, d)`` or ``(batch, tokens, d)``. Returns
    ``(z_out, cache)``.
    """
    bp = block_params
    single = z_in.ndim == 2
    z = z_in[None] if single else z_in
    b = z.shape[0]
    u, ln_cache = layernorm_forward(z, bp["ln1.gamma"], bp["ln1.beta"], cfg.ln_eps)
    q, q_hid = _project(u, bp, "Q", lora_scale)
    k, k_hid = _project(u, bp, "K", lora_scale)
    v, v_hid = _project(u, bp, "V", lora_scale)
    qh, kh, vh = (_split_heads(t, cfg.h) for t in (q, k, v))
    scores = matmul(qh, kh.transpose(0, 2, 1)) / math.sqrt(cfg.d_head)
    probs = softmax_rows(scores)
    concat = _merge_heads(matmul(probs, vh), b)
    o, o_hid = _project(concat, bp, "O", lora_scale)
    branch = o * bp["ls1"] if "ls1" in bp else o
    z_out = z + branch
    cache = dict(ln=ln_cache, u=u, qh=qh, kh=kh, vh=vh, probs=probs, concat=concat, o=o,
                 lora_hidden={"Q": q_hid, "K": k_hid, "V": v_hid, "O": o_hid})
    return (z_out[0] if single else z_out), cache


def mlp_block(z_in, block_params, cfg):
    bp = block_params
    u, ln_cache = layernorm_forward(z_in, bp["ln2.gamma"], bp["ln2.beta"], cfg.ln_eps)
    pre = linear(u, bp["mlp.W_FC1"], bp["mlp.b_FC1"])
    act, tanh_term = gelu_forward(pre)
    m = linear(act, bp["mlp.W_FC2"], bp["mlp.b_FC2"])
    branch = m * bp["ls2"] if "ls2" in bp else m
    return z_in + branch, dict(ln=ln_cache, u=u, pre=pre, act=act, tanh=tanh_term, m=m)


def _head_layers(params):
    k = 0
    while f"head_mlp.{k}.weight" in params:
        k += 1
    return k


def forward(x, params, cfg=None, plan=None):
    """Logits for a batch of images ``(B, C, S, S)`` (a single image is promoted)."""
    feat, cache = forward_features(x, params, cfg, plan)
    logits, head_cache = forward_head(feat, params)
    cache.update(head_cache)
    return logits, cache


def forward_features(x, params, cfg=None, plan=None):
    """Backbone output: the layer-normalised CLS row fed to the head, plus the backbone cache."""
    cfg = cfg or params.cfg
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] < 1:
        raise DimensionError(f"forward: expected a non-empty image batch, got shape {x.shape}")
    lora_scale = _lora_scale(plan)
    b = x.shape[0]
    patches = patchify(x, cfg)
    emb = linear(patches, params["patch_embed.weight"], params["patch_embed.bias"])
    cls = np.broadcast_to(params["cls_token"], (b, 1, cfg.d))
    z = np.concatenate([cls, emb], axis=1) + params["pos_embed"]
    blocks = []
    for l in range(cfg.L):
        bp = params.block(l)
        z, attn_cache = attention_block(z, bp, cfg, lora_scale)
        z, mlp_cache = mlp_block(z, bp, cfg)
        blocks.append((attn_cache, mlp_cache))
    feat, final_cache = layernorm_forward(z[:, 0], params["final_ln.gamma"], params["final_ln.beta"],
                                          cfg.ln_eps)
    return feat, dict(batch=b, patches=patches, blocks=blocks, final=final_cache, z_shape=z.shape)


def forward_head(feat, params):
    head_in, head_pre = [feat], []
    for i in range(_head_layers(params)):
        pre = linear(head_in[-1], params[f"head_mlp.{i}.weight"], params[f"head_mlp.{i}.bias"])
        head_pre.append(pre)
        head_in.append(gelu_forward(pre)[0])
    logits = linear(head_in[-1], params["head.W_pred"], params["head.b_pred"])
    return logits, dict(head_in=head_in, head_pre=head_pre)


def predict(x, params, cfg=None, plan=None, batch_size=256):
    x = np.asarray(x, dtype=np.float64)
    out = [forward(x[i:i + batch_size], params, cfg, plan)[0].argmax(axis=1)
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(x, labels, params, cfg=None, plan=None):
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict(x, params, cfg, plan) == np.asarray(labels)))


def trainable_map(params, plan):
    """``name -> column indices or None`` for the parameters ``plan`` trains."""
    if plan is None:
        return {name: None for name in params.keys()}
    return plan.trainable


def loss_and_backward(x, labels, params, cfg=None, plan=None):
    """Mean cross-entropy and analytic gradients of the trainable parameters.

    Gradients of frozen parameters are absent. A parameter trained on a column
    subset gets a gradient holding just those columns, computed directly.
    """
    cfg = cfg or params.cfg
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    bad = np.flatnonzero((labels < 0) | (labels >= cfg.num_classes))
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} at batch row {bad[0]} outside [0, {cfg.num_classes})")
    logits, cache = forward(x, params, cfg, plan)
    if logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"{logits.shape[0]} images but {labels.shape[0]} labels")
    loss, dlogits = cross_entropy(logits, labels)
    return loss, backward(dlogits, cache, params, cfg, plan)


def head_loss_and_backward(feat, labels, params, cfg=None, plan=None):
    """:func:`loss_and_backward` starting from precomputed backbone features.

    Only valid when ``plan`` trains nothing below the head (linear and MLP probes).
    """
    cfg = cfg or params.cfg
    floor = min((param_depth(n, cfg) for n in trainable_map(params, plan)), default=None)
    if floor is not None and floor < 2 + 8 * cfg.L:
        raise ConfigError("head_loss_and_backward needs a plan whose backbone is frozen")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    logits, cache = forward_head(np.asarray(feat, dtype=np.float64), params)
    loss, dlogits = cross_entropy(logits, labels)
    return loss, backward(dlogits, cache, params, cfg, plan)


class _Backprop:
    def __init__(self, params, cfg, plan):
        self.params = params
        self.cfg = cfg
        self.trainable = trainable_map(params, plan)
        self.lora_scale = _lora_scale(plan)
        self.floor = min((param_depth(n, cfg) for n in self.trainable), default=None)
        self.grads = {}

    def wants(self, name):
        return name in self.trainable

    def needs_below(self, depth):
        return self.floor is not None and self.floor < depth

    def weight(self, name, x, dy):
        """Weight gradient ``x^T dy`` over flattened leading axes, restricted to trained columns."""
        if not self.wants(name):
            return
        cols = self.trainable[name]
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        if cols is not None:
            dy2 = dy2[:, cols]
        self.grads[name] = matmul(x2.T, dy2)

    def vector(self, name, value):
        if self.wants(name):
            self.grads[name] = value

    def bias(self, name, dy):
        if self.wants(name):
            self.grads[name] = dy.reshape(-1, dy.shape[-1]).sum(axis=0)


def _back_linear(dy, w):
    return linear(dy, np.ascontiguousarray(w.T))


def _project_backward(p, bp, prefix, which, x, hidden, dy, need_input):
    """Gradients of ``_project``; returns ``dx`` (or None)."""
    p.weight(prefix + f"attn.W_{which}", x, dy)
    p.bias(prefix + f"attn.b_{which}", dy)
    dx = _back_linear(dy, bp[f"attn.W_{which}"]) if need_input else None
    if hidden is not None:
        s = p.lora_scale
        b_mat = bp[f"attn.lora_{which}.B"]
        p.weight(prefix + f"attn.lora_{which}.B", hidden, dy * s)
        need_lora_a = p.wants(prefix + f"attn.lora_{which}.A")
        if need_lora_a or need_input:
            dhid = _back_linear(dy, b_mat) * s
            p.weight(prefix + f"attn.lora_{which}.A", x, dhid)
            if need_input:
                dx = dx + _back_linear(dhid, bp[f"attn.lora_{which}.A"])
    return dx


def _attention_backward(p, l, dz, c, bp):
    """Backprop one attention sub-block. Returns ``dz_in`` or None when nothing below trains."""
    prefix = f"blocks.{l}."
    base = 1 + 8 * l
    cfg = p.cfg
    b = dz.shape[0]
    if "ls1" in bp:
        p.vector(prefix + "ls1", (dz * c["o"]).reshape(-1, cfg.d).sum(axis=0))
        if not p.needs_below(base + 3):
            return None
        d_o = dz * bp["ls1"]
    else:
        if not p.needs_below(base + 3):
            return None
        d_o = dz
    hid = c["lora_hidden"]
    d_concat = _project_backward(p, bp, prefix, "O", c["concat"], hid["O"], d_o, p.needs_below(base + 2))
    if d_concat is None:
        return None
    dheads = _split_heads(d_concat, cfg.h)
    probs, qh, kh, vh = c["probs"], c["qh"], c["kh"], c["vh"]
    dprobs = matmul(dheads, vh.transpose(0, 2, 1))
    dvh = matmul(probs.transpose(0, 2, 1), dheads)
    dscores = softmax_rows_backward(probs, dprobs) / math.sqrt(cfg.d_head)
    dqh = matmul(dscores, kh)
    dkh = matmul(dscores.transpose(0, 2, 1), qh)
    need_u = p.needs_below(base + 1)
    u = c["u"]
    du = None
    for which, dh in (("Q", dqh), ("K", dkh), ("V", dvh)):
        part = _project_backward(p, bp, prefix, which, u, hid[which], _merge_heads(dh, b), need_u)
        if part is not None:
            du = part if du is None else du + part
    if not need_u:
        return None
    need_in = p.needs_below(base)
    dx, dgamma, dbeta = layernorm_backward(du, bp["ln1.gamma"], c["ln"], need_input=need_in)
    p.vector(prefix + "ln1.gamma", dgamma)
    p.vector(prefix + "ln1.beta", dbeta)
    return dz + dx if need_in else None


def _mlp_backward(p, l, dz, c, bp):
    prefix = f"blocks.{l}."
    base = 1 + 8 * l
    cfg = p.cfg
    if "ls2" in bp:
        p.vector(prefix + "ls2", (dz * c["m"]).reshape(-1, cfg.d).sum(axis=0))
        if not p.needs_below(base + 7):
            return None
        dm = dz * bp["ls2"]
    else:
        if not p.needs_below(base + 7):
            return None
        dm = dz
    p.weight(prefix + "mlp.W_FC2", c["act"], dm)
    p.bias(prefix + "mlp.b_FC2", dm)
    if not p.needs_below(base + 6):
        return None
    dpre = _back_linear(dm, bp["mlp.W_FC2"]) * gelu_grad(c["pre"], c["tanh"])
    p.weight(prefix + "mlp.W_FC1", c["u"], dpre)
    p.bias(prefix + "mlp.b_FC1", dpre)
    if not p.needs_below(base + 5):
        return None
    du = _back_linear(dpre, bp["mlp.W_FC1"])
    need_in = p.needs_below(base + 4)
    dx, dgamma, dbeta = layernorm_backward(du, bp["ln2.gamma"], c["ln"], need_input=need_in)
    p.vector(prefix + "ln2.gamma", dgamma)
    p.vector(prefix + "ln2.beta", dbeta)
    return dz + dx if need_in else None


def backward(dlogits, cache, params, cfg=None, plan=None):
    """Reverse pass from ``dlogits`` through a cache produced by :func:`forward`."""
    cfg = cfg or params.cfg
    p = _Backprop(params, cfg, plan)
    if p.floor is None:
        return {}
    head_in = cache["head_in"]
    p.weight("head.W_pred", head_in[-1], dlogits)
    p.bias("head.b_pred", dlogits)
    n_head = len(cache["head_pre"])
    if not p.needs_below(_HEAD_DEPTH):
        return p.grads
    dh = _back_linear(dlogits, params["head.W_pred"])
    for i in reversed(range(n_head)):
        dpre = dh * gelu_grad(cache["head_pre"][i])
        p.weight(f"head_mlp.{i}.weight", head_in[i], dpre)
        p.bias(f"head_mlp.{i}.bias", dpre)
        if not p.needs_below(2 + 8 * cfg.L + i):
            return p.grads
        dh = _back_linear(dpre, params[f"head_mlp.{i}.weight"])
    need_z = p.needs_below(1 + 8 * cfg.L)
    dcls, dgamma, dbeta = layernorm_backward(dh, params["final_ln.gamma"], cache["final"], need_input=need_z)
    p.vector("final_ln.gamma", dgamma)
    p.vector("final_ln.beta", dbeta)
    if not need_z:
        return p.grads
    dz = np.zeros(cache["z_shape"])
    dz[:, 0] = dcls
    for l in reversed(range(cfg.L)):
        bp = params.block(l)
        attn_cache, mlp_cache = cache["blocks"][l]
        dz = _mlp_backward(p, l, dz, mlp_cache, bp)
        if dz is None:
            return p.grads
        dz = _attention_backward(p, l, dz, attn_cache, bp)
        if dz is None:
            return p.grads
    p.vector("cls_token", dz[:, 0].sum(axis=0))
    p.vector("pos_embed", dz.sum(axis=0))
    p.weight("patch_embed.weight", cache["patches"], dz[:, 1:])
    p.bias("patch_embed.bias", dz[:, 1:])
    return p.grads
