"""Rank-4 tensor container and layout helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Tensor:
    """(batch, channels, height, width) float32 array with optional grad."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError(f"expected a rank-4 tensor, got shape {self.data.shape}")
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float32)
            if self.grad.shape != self.data.shape:
                raise ValueError("grad shape does not match data shape")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def nchw_to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(x, (0, 2, 3, 1)))


def nhwc_to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(x, (0, 3, 1, 2)))
