"""Synthetic teacher-student classification tasks and the on-disk dataset format.

File layout (all integers little-endian)::

    b"APLADS1\\0"                                   8-byte magic
    u32 count, u32 channels, u32 S, u32 num_classes
    count x (u8 split_tag, u32 label, channels*S*S f32 pixels)

Split tags: 0 = train, 1 = val, 2 = test.
"""

from dataclasses import dataclass
import struct

import numpy as np

from .errors import ConfigError, DataError, FormatError, GenerationError
from .rng import Rng, derive_seed
from .vit import ViTParams, component_params, forward, init_params, param_shapes

MAGIC = b"APLADS1\0"
SPLITS = ("train", "val", "test")
_HEADER = struct.Struct("<8s4I")
_PERTURB_SALT = 0x7E
_SAMPLE_SALT = 0x5A


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = len(self.images)
        if len(self.labels) != n or len(self.splits) != n:
            raise DataError(f"{n} images, {len(self.labels)} labels, {len(self.splits)} split tags")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.size:
            raise DataError(f"record {bad[0]}: label {self.labels[bad[0]]} outside [0, {self.num_classes})")
        bad = np.flatnonzero(self.splits > 2)
        if bad.size:
            raise DataError(f"record {bad[0]}: split tag {self.splits[bad[0]]} is not 0, 1 or 2")

    def split(self, name):
        """``(images, labels)`` of one split, in file order."""
        mask = self.splits == SPLITS.index(name)
        return self.images[mask], self.labels[mask]

    def equals(self, other):
        return (self.num_classes == other.num_classes
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.splits, other.splits))


@dataclass(frozen=True, eq=False)
class TeacherTask:
    base_params: ViTParams
    teacher_params: ViTParams
    perturbation: str
    scale: float
    seed: int
    attempts: int


def perturb_component(params, which, scale, rng):
    """Copy of ``params`` with one component re-drawn at standard deviation ``scale``.

    Tensors initialised to a constant (norm gains, biases, layer scales) are
    re-drawn around that constant; randomly initialised ones around zero.
    """
    cfg = params.cfg
    out = params.copy()
    for name in component_params(cfg, which):
        shape = param_shapes(cfg)[name]
        leaf = name.rsplit(".", 1)[-1]
        center = 0.0
        if leaf == "gamma":
            center = 1.0
        elif leaf in ("ls1", "ls2"):
            center = float(cfg.layerscale_init)
        out[name] = center + rng.normal_array(shape, scale)
    return out


def _split_tags(n_train, n_val, n_test):
    return np.repeat(np.arange(3, dtype=np.uint8), [n_train, n_val, n_test])


def _label_samples(teacher, count, rng, tie_gap, max_tries, chunk=256):
    cfg = teacher.cfg
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    images = np.empty((count, *shape))
    labels = np.empty(count, dtype=np.int64)
    filled = 0
    misses = 0
    while filled < count:
        batch = np.stack([rng.normal_array(shape).astype(np.float32).astype(np.float64)
                          for _ in range(chunk)])
        logits = forward(batch, teacher, cfg)[0]
        top2 = np.sort(logits, axis=1)[:, -2:] if cfg.num_classes > 1 else None
        for i in range(chunk):
            if top2 is not None and top2[i, 1] - top2[i, 0] < tie_gap:
                misses += 1
                if misses >= max_tries:
                    raise GenerationError(
                        f"{max_tries} consecutive near-tie draws for sample {filled}; teacher looks degenerate")
                continue
            misses = 0
            images[filled] = batch[i]
            labels[filled] = int(np.argmax(logits[i]))
            filled += 1
            if filled == count:
                break
    return images, labels


def gen_teacher_task(cfg, seed, perturb="W_O", n_per_split=(2000, 500, 500), scale=0.1,
                     tie_gap=0.05, max_tries=100, min_class_fraction=0.1, max_teachers=20):
    """Build a realizable task: labels are the argmax of a perturbed copy of a base model.

    The base model (``init_params(cfg, Rng(seed))``) plays the pretrained
    backbone a student starts from; the teacher differs only in ``perturb``.
    Pixels are standard normal, rounded to float32 so files round-trip exactly.
    Draws whose top-2 teacher logits are closer than ``tie_gap`` are redrawn.
    If some class ends up with less than ``min_class_fraction`` of the data
    the perturbation is redrawn.
    """
    if isinstance(n_per_split, int):
        n_per_split = (n_per_split,) * 3
    if len(n_per_split) != 3 or min(n_per_split) < 1:
        raise ConfigError(f"n_per_split must give three positive sizes, got {n_per_split}")
    count = sum(n_per_split)
    base = init_params(cfg, Rng(seed))
    for attempt in range(max_teachers):
        teacher = perturb_component(base, perturb, scale, Rng(derive_seed(seed, _PERTURB_SALT, attempt)))
        rng = Rng(derive_seed(seed, _SAMPLE_SALT, attempt))
        images, labels = _label_samples(teacher, count, rng, tie_gap, max_tries)
        hist = np.bincount(labels, minlength=cfg.num_classes)
        if hist.min() >= min_class_fraction * count:
            task = TeacherTask(base, teacher, perturb, scale, seed, attempt + 1)
            return task, Dataset(images, labels, _split_tags(*n_per_split), cfg.num_classes)
    raise GenerationError(f"no teacher with balanced labels after {max_teachers} draws (seed {seed})")


def _record_dtype(pixels):
    return np.dtype([("split", "u1"), ("label", "<u4"), ("pixels", "<f4", (pixels,))])


def save_dataset(dataset, path):
    count, channels, size = dataset.images.shape[:3]
    rec = np.zeros(count, dtype=_record_dtype(channels * size * size))
    rec["split"] = dataset.splits
    rec["label"] = dataset.labels
    rec["pixels"] = dataset.images.reshape(count, -1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, count, channels, size, dataset.num_classes))
        fh.write(rec.tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header", len(raw))
    magic, count, channels, size, num_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if channels < 1 or size < 1 or num_classes < 1:
        raise FormatError(f"{path}: header has zero channels, size or class count", 12)
    dtype = _record_dtype(channels * size * size)
    body = len(raw) - _HEADER.size
    if body < count * dtype.itemsize:
        whole = body // dtype.itemsize
        raise FormatError(f"{path}: truncated in record {whole} of {count}",
                          _HEADER.size + whole * dtype.itemsize)
    if body > count * dtype.itemsize:
        raise FormatError(f"{path}: {body - count * dtype.itemsize} trailing bytes",
                          _HEADER.size + count * dtype.itemsize)
    rec = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    images = rec["pixels"].astype(np.float64).reshape(count, channels, size, size)
    return Dataset(images, rec["label"].astype(np.int64), rec["split"].copy(), num_classes)
