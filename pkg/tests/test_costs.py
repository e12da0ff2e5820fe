import time

import pytest

from apla.adaptation import build_plan
from apla.costs import activation_scalars, cost_model, measure_throughput
from apla.vit import ViTConfig


@pytest.fixture
def cfg():
    return ViTConfig()


def test_apla_optimizer_bytes(cfg):
    head = cfg.d * cfg.num_classes + cfg.num_classes
    for r in (1, cfg.d // 2, cfg.d):
        c = cost_model(cfg, build_plan("apla", cfg, r=r))
        assert c.optimizer_bytes == 2 * 8 * (cfg.L * cfg.d * r + head)
        assert c.grad_bytes == 8 * c.trainable_scalars


def test_apla_activation_flat_in_r(cfg):
    acts = {cost_model(cfg, build_plan("apla", cfg, r=r)).activation_bytes_per_sample for r in (1, 16, 32)}
    assert len(acts) == 1


def test_activation_ordering(cfg):
    def act(kind, **kw):
        return activation_scalars(cfg, build_plan(kind, cfg, **kw))

    assert act("linear") == cfg.d + cfg.num_classes
    assert act("linear") < act("partial", k=1) < act("apla", r=4) <= act("full")
    assert act("apla", r=4) == act("component", which="W_O")
    assert act("apla", r=4, block_range=[2, 4]) < act("apla", r=4)


def test_lora_growth_exceeds_apla_growth(cfg):
    def count(kind, **kw):
        return build_plan(kind, cfg, **kw).trainable_count()

    lora_step = count("lora", rank=2, targets=["W_Q"]) - count("lora", rank=1, targets=["W_Q"])
    apla_step = count("apla", r=2) - count("apla", r=1)
    assert lora_step == 2 * cfg.d * cfg.L
    assert apla_step == cfg.d * cfg.L
    assert lora_step > apla_step


def test_training_bytes(cfg):
    c = cost_model(cfg, build_plan("apla", cfg, r=8))
    assert c.training_bytes(2) - c.training_bytes(1) == c.activation_bytes_per_sample


def test_throughput_sleep():
    sample = measure_throughput(lambda: time.sleep(0.01), 1, 10, batch=1, repeats=1)
    assert 80 <= sample.images_per_second <= 120
    assert sample.phase == "train"


def test_throughput_rejects_zero_iters():
    with pytest.raises(ValueError):
        measure_throughput(lambda: None, 0, 0)
