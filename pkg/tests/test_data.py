import numpy as np
import pytest

from apla.data import MAGIC, Dataset, gen_teacher_task, load_dataset, perturb_component, save_dataset
from apla.errors import ConfigError, DataError, FormatError, GenerationError
from apla.rng import Rng
from apla.vit import ViTConfig, forward, init_params

CFG = ViTConfig(image_size=4, patch_size=2, channels=1, d=8, h=2, L=1, num_classes=3)


@pytest.fixture(scope="module")
def task():
    return gen_teacher_task(CFG, 3, "W_O", (60, 20, 20), scale=2.0, tie_gap=0.002)


def test_labels_are_teacher_argmax_with_margin(task):
    t, ds = task
    logits, _ = forward(ds.images, t.teacher_params, CFG)
    assert np.array_equal(logits.argmax(axis=1), ds.labels)
    top2 = np.sort(logits, axis=1)[:, -2:]
    assert np.all(top2[:, 1] - top2[:, 0] >= 0.002)


def test_teacher_differs_only_in_perturbed_component(task):
    t, _ = task
    for name in t.base_params.keys():
        same = np.array_equal(t.base_params[name], t.teacher_params[name])
        assert same != name.endswith("attn.W_O"), name


def test_class_balance_and_splits(task):
    _, ds = task
    assert np.bincount(ds.labels, minlength=3).min() >= 10
    assert [len(ds.split(s)[1]) for s in ("train", "val", "test")] == [60, 20, 20]
    assert np.array_equal(ds.images, ds.images.astype(np.float32).astype(np.float64))


def test_generation_deterministic(task):
    _, again = gen_teacher_task(CFG, 3, "W_O", (60, 20, 20), scale=2.0, tie_gap=0.002)
    assert again.equals(task[1])


def test_perturb_redraws_around_init_constant():
    base = init_params(CFG, Rng(0))
    out = perturb_component(base, "layernorm", 0.1, Rng(1))
    gamma = out["blocks.0.ln1.gamma"]
    assert abs(gamma.mean() - 1.0) < 0.2 and not np.all(gamma == 1.0)


def test_degenerate_teacher_raises():
    with pytest.raises(GenerationError):
        gen_teacher_task(CFG, 0, "W_O", (10, 10, 10), scale=0.0, tie_gap=0.05)


def test_bad_sizes_rejected():
    with pytest.raises(ConfigError):
        gen_teacher_task(CFG, 0, "W_O", (10, 0, 10))


def test_round_trip_bitwise(task, tmp_path):
    path = tmp_path / "d.bin"
    save_dataset(task[1], path)
    assert load_dataset(path).equals(task[1])


def test_bad_magic(task, tmp_path):
    path = tmp_path / "d.bin"
    save_dataset(task[1], path)
    raw = bytearray(path.read_bytes())
    raw[0:8] = b"NOTADATA"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_dataset(path)


def test_truncation_reports_offset(task, tmp_path):
    path = tmp_path / "d.bin"
    save_dataset(task[1], path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="offset"):
        load_dataset(path)


def test_trailing_bytes_and_short_header(task, tmp_path):
    path = tmp_path / "d.bin"
    save_dataset(task[1], path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError):
        load_dataset(path)
    path.write_bytes(MAGIC)
    with pytest.raises(FormatError):
        load_dataset(path)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1, 4, 4)), np.array([0, 5]), np.array([0, 0]), 3)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1, 4, 4)), np.array([0]), np.array([0, 0]), 3)
