"""Frame and partition-map file I/O.

Frames travel as binary PGM (P5, maxval 255); a directory of PGMs is a
sequence.  Partition maps use a one-block-per-line text format:

    width height
    x y size
    ...
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .codec import FramePlane, PartitionMap


def write_pgm(path: str | Path, frame: FramePlane) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        fh.write(frame.samples.tobytes())


def read_pgm(path: str | Path) -> FramePlane:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#.*\s+)*(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=m.end())
    if raster.size != width * height:
        raise ValueError(f"{path}: truncated raster")
    return FramePlane(width, height, raster.reshape(height, width).copy())


def write_partition(path: str | Path, partition: PartitionMap) -> None:
    lines = [f"{partition.frame_width} {partition.frame_height}"]
    lines += [f"{x} {y} {size}" for x, y, size in partition.blocks]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_partition(path: str | Path) -> PartitionMap:
    lines = Path(path).read_text(encoding="ascii").split()
    if len(lines) < 2 or (len(lines) - 2) % 3:
        raise ValueError(f"{path}: malformed partition file")
    width, height = int(lines[0]), int(lines[1])
    vals = [int(v) for v in lines[2:]]
    blocks = [tuple(vals[i : i + 3]) for i in range(0, len(vals), 3)]
    return PartitionMap(width, height, blocks)  # type: ignore[arg-type]
