"""A tiny ViT: forward pass, analytic gradients, and a finite-difference spot check.

Run with ``python3 demos/01_model_and_gradients.py``.
"""

import numpy as np

from apla import Rng, ViTConfig, forward, init_params, loss_and_backward

cfg = ViTConfig(image_size=8, patch_size=4, channels=1, d=16, h=2, L=2, num_classes=3)
params = init_params(cfg, Rng(0))
print(f"{len(params)} tensors, {params.num_scalars()} scalars, {cfg.tokens} tokens per image")

x = Rng(1).normal_array((4, 1, 8, 8))
y = np.array([0, 1, 2, 1])
logits, _ = forward(x, params, cfg)
print("logits:\n", logits.round(4))

loss, grads = loss_and_backward(x, y, params, cfg)
print(f"loss {loss:.6f}")

# central difference on a few entries of one W_O
name, h = "blocks.1.attn.W_O", 1e-5
for i, j in [(0, 0), (3, 7), (15, 15)]:
    bumped = params.copy()
    w = bumped[name].copy()
    w[i, j] += h
    bumped[name] = w
    up = loss_and_backward(x, y, bumped, cfg)[0]
    w[i, j] -= 2 * h
    bumped[name] = w
    down = loss_and_backward(x, y, bumped, cfg)[0]
    print(f"{name}[{i},{j}]  analytic {grads[name][i, j]: .3e}  numeric {(up - down) / (2 * h): .3e}")
