import numpy as np
import pytest

from apla.rng import Rng
from apla.vit import ViTConfig, init_params


@pytest.fixture
def tiny_cfg():
    return ViTConfig(image_size=4, patch_size=2, channels=1, d=16, h=2, L=2, num_classes=3)


def perturbed_params(cfg, seed=0, scale=0.3):
    """Init params plus noise, so layernorm gains, biases and layerscale are all non-trivial."""
    params = init_params(cfg, Rng(seed))
    noise = Rng(seed + 1000)
    for name in params.keys():
        params[name] = params[name] + scale * noise.normal_array(params[name].shape)
    return params


def images(cfg, n, seed=5):
    return Rng(seed).normal_array((n, cfg.channels, cfg.image_size, cfg.image_size))


def labels(cfg, n, seed=6):
    rng = Rng(seed)
    return np.array([rng.below(cfg.num_classes) for _ in range(n)])
