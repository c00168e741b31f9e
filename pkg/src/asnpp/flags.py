"""Per-patch model-selection flags and their 2-bit packed serialization.

Flags are integers in [0,3] in patch raster order.  Packing is two bits
per flag, most-significant-first within each byte, final byte zero-padded;
[0,1,2,3] packs to 0b00011011 = 0x1B.

File format "ASNF": magic, version u32, patch_count u32 (little-endian),
then the packed flags.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ASNF"
VERSION = 1
FLAGS_PER_BYTE = 4
FLAG_BITS = 2


def pack_flags(flags: np.ndarray) -> bytes:
    flags = np.asarray(flags, dtype=np.uint8)
    if flags.ndim != 1:
        raise ValueError("flags must be a flat sequence")
    if flags.size and (flags.max() > 3):
        raise ValueError("flags must be in [0, 3]")
    padded = np.zeros((flags.size + 3) // 4 * 4, dtype=np.uint8)
    padded[: flags.size] = flags
    quads = padded.reshape(-1, 4)
    packed = (quads[:, 0] << 6) | (quads[:, 1] << 4) | (quads[:, 2] << 2) | quads[:, 3]
    return packed.astype(np.uint8).tobytes()


def unpack_flags(packed: bytes, count: int) -> np.ndarray:
    need = (count + 3) // 4
    if len(packed) != need:
        raise ValueError(f"packed flag payload has {len(packed)} bytes, expected {need}")
    b = np.frombuffer(packed, dtype=np.uint8)
    out = np.empty(len(b) * 4, dtype=np.uint8)
    out[0::4] = (b >> 6) & 3
    out[1::4] = (b >> 4) & 3
    out[2::4] = (b >> 2) & 3
    out[3::4] = b & 3
    return out[:count]


@dataclass
class FlagStream:
    flags: np.ndarray  # uint8 in [0,3], raster order

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=np.uint8).reshape(-1)
        if self.flags.size and self.flags.max() > 3:
            raise ValueError("flags must be in [0, 3]")

    @property
    def patch_count(self) -> int:
        return int(self.flags.size)

    @property
    def packed(self) -> bytes:
        return pack_flags(self.flags)

    @classmethod
    def from_packed(cls, packed: bytes, count: int) -> "FlagStream":
        return cls(unpack_flags(packed, count))


def save_flags(path: str | Path, stream: FlagStream) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, stream.patch_count))
        fh.write(stream.packed)


def load_flags(path: str | Path) -> FlagStream:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an ASNF flag file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported ASNF version {version}")
    return FlagStream.from_packed(data[12:], count)
