"""Binary checkpoints of a :class:`~apla.vit.ViTParams`.

Layout (little-endian)::

    b"APLACKP1"                 magic
    u32 version                 (1)
    u32 n, n bytes              model config as UTF-8 JSON (sorted keys)
    u32 tensor count
    per tensor: u16 name length, name bytes, u8 rank, rank x u32 dims, f64 data
"""

import json
import struct

import numpy as np

from .errors import DimensionError, FormatError
from .vit import ViTConfig, ViTParams, param_shapes

MAGIC = b"APLACKP1"
VERSION = 1


def checkpoint_save(params, path):
    config = json.dumps(params.cfg.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config)), config,
             struct.pack("<I", len(params))]
    for name, value in params.items():
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def checkpoint_load(path, cfg=None):
    """Read a checkpoint; core tensors are checked against the embedded config and ``cfg`` if given."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(8, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic", 0)
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 8)
    (n,) = reader.unpack("<I", "config length")
    at = reader.pos
    try:
        stored = ViTConfig.from_dict(json.loads(reader.take(n, "config").decode()))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable config block ({exc})", at) from None
    (count,) = reader.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (length,) = reader.unpack("<H", "name length")
        name = reader.take(length, "name").decode()
        (rank,) = reader.unpack("<B", f"rank of {name}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name}")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(reader.take(8 * size, f"data of {name}"), dtype="<f8")
        tensors[name] = data.astype(np.float64).reshape(dims)
    if reader.pos != len(reader.raw):
        raise FormatError(f"{path}: trailing bytes after {count} tensors", reader.pos)
    for against in (stored, cfg):
        if against is not None:
            _check_shapes(tensors, against)
    return ViTParams(cfg or stored, tensors)


def _check_shapes(tensors, cfg):
    for name, shape in param_shapes(cfg).items():
        if name not in tensors:
            raise DimensionError(f"checkpoint lacks tensor {name} required by the model config")
        if tensors[name].shape != shape:
            raise DimensionError(f"tensor {name} has shape {tensors[name].shape}, config expects {shape}")
