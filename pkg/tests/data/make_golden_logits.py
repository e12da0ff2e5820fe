"""Regenerates golden_logits.json from the extended-precision reference forward.

    python3 tests/data/make_golden_logits.py
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from apla.rng import Rng  # noqa: E402
from apla.vit import ViTConfig, init_params  # noqa: E402
from tests.reference_vit import ref_logits  # noqa: E402

CFG = dict(image_size=4, patch_size=2, channels=2, d=16, h=2, L=2, num_classes=3,
           use_layerscale=True, layerscale_init=0.7)


def golden_inputs():
    cfg = ViTConfig(**CFG)
    params = init_params(cfg, Rng(11))
    noise = Rng(12)
    for name in params.keys():
        params[name] = params[name] + 0.3 * noise.normal_array(params[name].shape)
    x = Rng(13).normal_array((3, cfg.channels, cfg.image_size, cfg.image_size))
    return cfg, params, x


if __name__ == "__main__":
    cfg, params, x = golden_inputs()
    logits = ref_logits(x, dict(params.items()), cfg).astype(np.float64)
    out = {"config": CFG, "param_seed": 11, "noise_seed": 12, "noise_scale": 0.3, "image_seed": 13,
           "logits": [[float.hex(float(v)) for v in row] for row in logits]}
    with open(os.path.join(os.path.dirname(__file__), "golden_logits.json"), "w") as fh:
        json.dump(out, fh, indent=1)
    print(logits)
