"""ASNM model file format.

Layout (all integers little-endian u32):

    magic "ASNM" | version | descriptor_len | descriptor utf-8 |
    tensor_count | per tensor: name_len, name utf-8, ndim, dims..., f32 data

The descriptor is an opaque architecture string (JSON, in practice) owned
by the model builder.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ASNM"
VERSION = 1


@dataclass
class ModelWeights:
    """Named, ordered parameter tensors plus an architecture descriptor."""

    descriptor: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in self.tensors.items():
            self.tensors[name] = np.ascontiguousarray(arr, dtype=np.float32)


def save_weights(path: str | Path, weights: ModelWeights) -> None:
    desc = weights.descriptor.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(desc)), desc]
    parts.append(struct.pack("<I", len(weights.tensors)))
    for name, arr in weights.tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path: str | Path) -> ModelWeights:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an ASNM model file")
    pos = 4

    def u32() -> int:
        nonlocal pos
        (v,) = struct.unpack_from("<I", data, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported ASNM version {version}")
    dlen = u32()
    descriptor = data[pos : pos + dlen].decode("utf-8")
    pos += dlen
    tensors: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        nlen = u32()
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        ndim = u32()
        shape = tuple(u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        tensors[name] = arr.reshape(shape).copy()
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return ModelWeights(descriptor=descriptor, tensors=tensors)
