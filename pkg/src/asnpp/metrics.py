"""Quality and rate-distortion measurement: PSNR, delta-PSNR, BD-rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PSNR_CAP_DB = 100.0
PEAK = 255.0
BD_CURVE_POINTS = 4


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB between two 8-bit rasters.

    Identical inputs return the 100 dB cap so downstream deltas stay finite.
    Accepts FramePlane-likes (with .samples) or plain arrays.
    """
    xa = np.asarray(getattr(a, "samples", a), dtype=np.float64)
    xb = np.asarray(getattr(b, "samples", b), dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch {xa.shape} vs {xb.shape}")
    mse = float(np.mean((xa - xb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(PEAK * PEAK / mse))


def delta_psnr_report(
    baseline_frames: Sequence, processed_frames: Sequence, originals: Sequence
) -> tuple[list[float], float]:
    """Per-frame and mean PSNR improvement of processed over baseline."""
    if not (len(baseline_frames) == len(processed_frames) == len(originals)):
        raise ValueError("frame lists must have equal length")
    deltas = [
        psnr(p, o) - psnr(b, o)
        for b, p, o in zip(baseline_frames, processed_frames, originals)
    ]
    return deltas, float(np.mean(deltas))


@dataclass
class RdPoint:
    rate_bits: float
    psnr_db: float

    def __post_init__(self):
        if not self.rate_bits > 0:
            raise ValueError("rate must be positive")
        if not np.isfinite(self.psnr_db):
            raise ValueError("psnr must be finite")


@dataclass
class RdCurve:
    points: list[RdPoint]

    def __post_init__(self):
        rates = [p.rate_bits for p in self.points]
        if any(r2 <= r1 for r1, r2 in zip(rates, rates[1:])):
            raise ValueError("rates must be strictly increasing")

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_bits for p in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr_db for p in self.points])


def _fit_log_rate(curve: RdCurve) -> np.poly1d:
    return np.poly1d(np.polyfit(curve.psnrs, np.log10(curve.rates), 3))


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Bjontegaard delta rate in percent; negative means bitrate saving.

    Classic cubic-fit variant: fit log10(rate) as a cubic in PSNR for each
    curve and integrate both over the common PSNR interval.  Exactly four
    points per curve (the four-qp protocol).
    """
    for c in (anchor, test):
        if len(c.points) != BD_CURVE_POINTS:
            raise ValueError(f"curves must have exactly {BD_CURVE_POINTS} points")
    lo = max(anchor.psnrs.min(), test.psnrs.min())
    hi = min(anchor.psnrs.max(), test.psnrs.max())
    if not hi > lo:
        raise ValueError("PSNR ranges of the two curves do not overlap")
    span = hi - lo
    int_anchor = np.polyint(_fit_log_rate(anchor))
    int_test = np.polyint(_fit_log_rate(test))
    avg_diff = ((int_test(hi) - int_test(lo)) - (int_anchor(hi) - int_anchor(lo))) / span
    return float((10.0 ** avg_diff - 1.0) * 100.0)
