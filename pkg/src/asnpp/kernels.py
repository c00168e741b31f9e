"""Hot numeric kernels with numba-accelerated and pure-numpy paths.

The convolution layers spend most of their time gathering sliding windows
(im2col) before handing the reduction to BLAS.  Both paths produce
bit-identical output; the numba path is selected by default when numba
imports, and ``ASNPP_DISABLE_NUMBA=1`` in the environment forces the numpy
fallback.  ``bench/bench_kernels.py`` compares the two.

Layout convention: activations are NHWC float arrays, window matrices are
``(N*H*W, k*k*C)`` with the channel index fastest.
"""

from __future__ import annotations

import os
import threading
import warnings

import numpy as np

NUMBA_AVAILABLE = False
if os.environ.get("ASNPP_DISABLE_NUMBA", "0") != "1":
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            import numba
            from numba import njit, prange
        if "NUMBA_THREADING_LAYER" not in os.environ:
            # fastest of the portable layers here, and it skips the noisy
            # TBB version probe
            numba.config.THREADING_LAYER = "workqueue"
        NUMBA_AVAILABLE = True
    except ImportError:
        pass

if not NUMBA_AVAILABLE:

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(f):
            return f

        return wrap

    prange = range  # type: ignore[assignment]

_MALLOC_TUNED = False


def reuse_large_allocations() -> bool:
    """Keep big malloc blocks on the heap instead of mmap/munmap cycles.

    Training reallocates multi-hundred-MB window matrices every step; with
    glibc defaults each one is a fresh mmap whose pages fault on first
    write, which costs more than the compute.  Raising the mmap and trim
    thresholds lets freed blocks be reused.  No-op off glibc.
    """
    global _MALLOC_TUNED
    if _MALLOC_TUNED:
        return True
    try:
        import ctypes

        libc = ctypes.CDLL(None, use_errno=True)
        m_trim_threshold, m_mmap_threshold = -1, -3
        ok = bool(libc.mallopt(m_mmap_threshold, 1 << 30))
        ok = bool(libc.mallopt(m_trim_threshold, 1 << 30)) and ok
        _MALLOC_TUNED = ok
    except (OSError, AttributeError):
        _MALLOC_TUNED = False
    return _MALLOC_TUNED


def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    p = k // 2
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xp[:, p : p + h, p : p + w, :] = x
    return xp


def im2col_numpy(x: np.ndarray, k: int) -> np.ndarray:
    """Sliding k-by-k windows of x (N,H,W,C) as rows of (N*H*W, k*k*C)."""
    n, h, w, c = x.shape
    xp = _pad_same(x, k)
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, h, w, k, k, c), (s[0], s[1], s[2], s[1], s[2], s[3])
    )
    return np.ascontiguousarray(view).reshape(n * h * w, k * k * c)


@njit(parallel=True, cache=True)
def _im2col_jit(x, k, cols):  # pragma: no cover - exercised via im2col
    n, h, w, c = x.shape
    p = k // 2
    for i in prange(n * h):
        ni = i // h
        y = i % h
        for xx in range(w):
            row = (ni * h + y) * w + xx
            for ki in range(k):
                yy = y + ki - p
                for kj in range(k):
                    xj = xx + kj - p
                    off = (ki * k + kj) * c
                    if yy < 0 or yy >= h or xj < 0 or xj >= w:
                        for ch in range(c):
                            cols[row, off + ch] = 0.0
                    else:
                        for ch in range(c):
                            cols[row, off + ch] = x[ni, yy, xj, ch]


# the parallel threading layer is not reentrant; serialize kernel entry so
# caller-side worker pools stay safe
_JIT_LOCK = threading.Lock()


def im2col_numba(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    cols = np.empty((n * h * w, k * k * c), dtype=x.dtype)
    with _JIT_LOCK:
        _im2col_jit(np.ascontiguousarray(x), k, cols)
    return cols


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Dispatch to the active implementation (see module docstring)."""
    if NUMBA_AVAILABLE:
        return im2col_numba(x, k)
    return im2col_numpy(x, k)
