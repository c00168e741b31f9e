"""Orthonormal 2-D DCT and zigzag coefficient ordering.

Shared by the toy codec (block transform) and the cluster-based label
initialization (frequency-domain residual features).
"""

from __future__ import annotations

import numpy as np

SUPPORTED_SIZES = (2, 4, 8, 16, 32, 64)

_BASIS: dict[int, np.ndarray] = {}
_ZIGZAG: dict[int, np.ndarray] = {}


def dct_basis(n: int) -> np.ndarray:
    """Orthonormal type-II DCT basis matrix, rows are basis vectors."""
    if n not in SUPPORTED_SIZES:
        raise ValueError(f"unsupported transform size {n}, expected one of {SUPPORTED_SIZES}")
    if n not in _BASIS:
        i = np.arange(n)
        d = np.cos(np.pi * (2 * i[None, :] + 1) * i[:, None] / (2 * n)) * np.sqrt(2.0 / n)
        d[0, :] = 1.0 / np.sqrt(n)
        _BASIS[n] = d
    return _BASIS[n]


def _check_block(block: np.ndarray, n: int) -> np.ndarray:
    b = np.asarray(block, dtype=np.float64)
    if b.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} block, got shape {b.shape}")
    return b


def dct2d(block: np.ndarray, n: int) -> np.ndarray:
    """Forward orthonormal 2-D DCT of an n-by-n block."""
    b = _check_block(block, n)
    d = dct_basis(n)
    return d @ b @ d.T


def idct2d(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Exact inverse of :func:`dct2d`."""
    c = _check_block(coeffs, n)
    d = dct_basis(n)
    return d.T @ c @ d


def dct2d_batch(blocks: np.ndarray) -> np.ndarray:
    """Forward DCT of a stack of blocks, shape (m, n, n)."""
    n = blocks.shape[-1]
    d = dct_basis(n)
    return d @ blocks @ d.T


def idct2d_batch(coeffs: np.ndarray) -> np.ndarray:
    n = coeffs.shape[-1]
    d = dct_basis(n)
    return d.T @ coeffs @ d


def zigzag_indices(n: int) -> np.ndarray:
    """Flat indices of an n-by-n matrix in zigzag scan order.

    The scan starts at (0,0), walks anti-diagonals, and alternates
    direction so the second entry is (0,1).
    """
    if n not in _ZIGZAG:
        order = []
        for d in range(2 * n - 1):
            rows = range(min(d, n - 1), max(0, d - n + 1) - 1, -1)
            if d % 2:
                rows = reversed(list(rows))
            for r in rows:
                order.append(r * n + (d - r))
        _ZIGZAG[n] = np.asarray(order, dtype=np.int64)
    return _ZIGZAG[n]


def zigzag_flatten(mat: np.ndarray) -> np.ndarray:
    """Flatten a square matrix into zigzag scan order."""
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    return mat.reshape(-1)[zigzag_indices(n)]
