"""Guidance masks derived from the partition map.

Two variants: a local-mean mask (each block filled with its mean decoded
value, scaled to [0,1]) and a boundary mask (a 2-pixel band straddling
every internal block edge).  Mask values share the network input scaling
of frames, so both can feed the mask stream directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import FramePlane, PartitionMap


@dataclass
class Mask:
    width: int
    height: int
    values: np.ndarray  # float32 in [0,1], shape (height, width)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"mask values shape {self.values.shape} does not match "
                f"{self.height}x{self.width}"
            )


def gen_mean_mask(decoded: FramePlane, partition: PartitionMap) -> Mask:
    """Fill each partition block with its mean decoded value / 255."""
    if (partition.frame_width, partition.frame_height) != (decoded.width, decoded.height):
        raise ValueError(
            f"partition {partition.frame_width}x{partition.frame_height} does not "
            f"match frame {decoded.width}x{decoded.height}"
        )
    src = decoded.samples.astype(np.float64)
    out = np.empty((decoded.height, decoded.width), dtype=np.float32)
    for x, y, size in partition.blocks:
        out[y : y + size, x : x + size] = src[y : y + size, x : x + size].mean() / 255.0
    return Mask(decoded.width, decoded.height, out)


def gen_boundary_mask(partition: PartitionMap) -> Mask:
    """Mark a width-2 band (one pixel each side) along internal block edges.

    The frame border separates nothing and stays unmarked.
    """
    h, w = partition.frame_height, partition.frame_width
    out = np.zeros((h, w), dtype=np.float32)
    for x, y, size in partition.blocks:
        if x > 0:
            out[y : y + size, x - 1 : x + 1] = 1.0
        if y > 0:
            out[y - 1 : y + 1, x : x + size] = 1.0
    return Mask(w, h, out)
