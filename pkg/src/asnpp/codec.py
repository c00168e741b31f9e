"""Toy quadtree block-transform codec.

Stands in for a real video encoder: it produces decoded frames with
realistic block-transform artifacts, a quadtree partition map, and a rate
estimate.  It is NOT bit-compatible with any standard codec — it exists so
the rest of the pipeline (masks, post-processing models, BD-rate
evaluation) is self-contained and deterministic.

Quantizer step follows the conventional doubling-every-6 mapping
``step = 2^((qp - 4) / 6)`` so familiar qp values keep their meaning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transform import dct2d_batch, idct2d_batch

CTU_SIZE = 64
MIN_BLOCK = 8
BLOCK_SIZES = (8, 16, 32, 64)
DEFAULT_SPLIT_THRESHOLD = 100.0


@dataclass
class FramePlane:
    """Single-channel 8-bit raster; samples are row-major (height, width)."""

    width: int
    height: int
    samples: np.ndarray

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError(f"frame dimensions {self.width}x{self.height} below minimum 8x8")
        self.samples = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if self.samples.shape != (self.height, self.width):
            raise ValueError(
                f"samples shape {self.samples.shape} does not match "
                f"{self.height}x{self.width}"
            )

    @classmethod
    def from_array(cls, samples: np.ndarray) -> "FramePlane":
        samples = np.asarray(samples)
        return cls(width=samples.shape[1], height=samples.shape[0], samples=samples)


@dataclass
class PartitionMap:
    """Quadtree tiling of a frame into square blocks (x, y, size)."""

    frame_width: int
    frame_height: int
    blocks: list[tuple[int, int, int]]

    def validate(self) -> None:
        """Raise if the blocks do not tile the frame exactly."""
        owner = np.zeros((self.frame_height, self.frame_width), dtype=np.int32)
        area = 0
        for x, y, size in self.blocks:
            if size not in BLOCK_SIZES:
                raise ValueError(f"illegal block size {size}")
            if x % size or y % size:
                raise ValueError(f"block ({x},{y},{size}) not aligned to its size")
            if x + size > self.frame_width or y + size > self.frame_height:
                raise ValueError(f"block ({x},{y},{size}) exceeds the frame")
            owner[y : y + size, x : x + size] += 1
            area += size * size
        if area != self.frame_width * self.frame_height:
            raise ValueError("block areas do not sum to the frame area")
        if not np.all(owner == 1):
            raise ValueError("blocks overlap or leave gaps")

    def size_histogram(self) -> dict[int, int]:
        hist = {s: 0 for s in BLOCK_SIZES}
        for _, _, size in self.blocks:
            hist[size] += 1
        return hist


@dataclass
class QpConfig:
    """Quantization knob; quant_step derives from qp."""

    qp: int

    def __post_init__(self):
        if not 0 <= self.qp <= 51:
            raise ValueError(f"qp {self.qp} outside [0, 51]")

    @property
    def quant_step(self) -> float:
        return float(2.0 ** ((self.qp - 4) / 6.0))


@dataclass
class RateEstimate:
    payload_bits: float
    signaling_bits: int
    total_bits: float = field(init=False)

    def __post_init__(self):
        self.total_bits = self.payload_bits + self.signaling_bits


def _check_ctu_multiple(frame: FramePlane) -> None:
    if frame.width % CTU_SIZE or frame.height % CTU_SIZE:
        raise ValueError(
            f"frame dimensions {frame.width}x{frame.height} must be multiples of "
            f"{CTU_SIZE}; crop first"
        )


def partition_frame(
    frame: FramePlane, split_threshold: float = DEFAULT_SPLIT_THRESHOLD
) -> PartitionMap:
    """Recursive variance-driven quadtree split, 64x64 down to 8x8.

    A block splits into quadrants while its sample variance exceeds the
    threshold and its size is above the 8-pixel floor.
    """
    _check_ctu_multiple(frame)
    pixels = frame.samples.astype(np.float64)
    blocks: list[tuple[int, int, int]] = []

    def split(x: int, y: int, size: int) -> None:
        if size > MIN_BLOCK and pixels[y : y + size, x : x + size].var() > split_threshold:
            half = size // 2
            for dy in (0, half):
                for dx in (0, half):
                    split(x + dx, y + dy, half)
        else:
            blocks.append((x, y, size))

    for y0 in range(0, frame.height, CTU_SIZE):
        for x0 in range(0, frame.width, CTU_SIZE):
            split(x0, y0, CTU_SIZE)
    return PartitionMap(frame.width, frame.height, blocks)


def _signaling_bits(partition: PartitionMap) -> int:
    # One bit per split decision: every quadtree node larger than the
    # 8-pixel floor decides whether to split.  Node counts per size follow
    # from the leaf histogram bottom-up (4 children collapse to 1 parent).
    hist = partition.size_histogram()
    bits = 0
    internal = 0
    for size in (8, 16, 32):
        nodes = hist[size] + internal
        internal = nodes // 4
        if size > MIN_BLOCK:
            bits += nodes
    roots = (partition.frame_width // CTU_SIZE) * (partition.frame_height // CTU_SIZE)
    bits += roots
    return bits


def _entropy_bits(levels: np.ndarray) -> float:
    """Zeroth-order entropy of the symbol distribution, times symbol count."""
    _, counts = np.unique(levels, return_counts=True)
    total = levels.size
    p = counts / total
    return float(-(p * np.log2(p)).sum() * total)


def encode_decode(
    frame: FramePlane,
    qp: QpConfig,
    split_threshold: float = DEFAULT_SPLIT_THRESHOLD,
) -> tuple[FramePlane, PartitionMap, RateEstimate]:
    """Transform-quantize-reconstruct every partition block.

    Returns the decoded frame, the partition map, and the rate estimate
    (payload entropy plus one signaling bit per split decision).
    """
    _check_ctu_multiple(frame)
    partition = partition_frame(frame, split_threshold)
    step = qp.quant_step
    src = frame.samples.astype(np.float64)
    out = np.empty_like(src)
    payload = 0.0

    by_size: dict[int, list[tuple[int, int]]] = {}
    for x, y, size in partition.blocks:
        by_size.setdefault(size, []).append((x, y))

    for size in sorted(by_size):
        coords = by_size[size]
        stack = np.stack([src[y : y + size, x : x + size] for x, y in coords])
        coeffs = dct2d_batch(stack)
        levels = np.round(coeffs / step).astype(np.int64)
        recon = idct2d_batch(levels.astype(np.float64) * step)
        for i, (x, y) in enumerate(coords):
            out[y : y + size, x : x + size] = recon[i]
            payload += _entropy_bits(levels[i])

    decoded = np.clip(np.round(out), 0, 255).astype(np.uint8)
    rate = RateEstimate(payload_bits=payload, signaling_bits=_signaling_bits(partition))
    return FramePlane.from_array(decoded), partition, rate
