"""Finite-difference oracle for layer backward passes.

Runs the fragment in float64 (central differences, step 1e-3 on inputs in
[0,1]) and compares against the analytic gradients.  The loss driving the
check is a fixed random linear functional of the output, which exercises
every output element with distinct weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Layer

DEFAULT_STEP = 1e-3
DEFAULT_MAX_PARAMS = 10_000


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # The floor keeps float noise on true-zero gradients from registering
    # as relative error.
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(
    layer: Layer,
    x: np.ndarray,
    tolerance: float = 1e-3,
    step: float = DEFAULT_STEP,
    seed: int = 0,
    max_params: int | None = DEFAULT_MAX_PARAMS,
    check_input: bool = True,
) -> GradCheckReport:
    """Compare analytic grads of a layer fragment to central differences.

    ``max_params`` guards against accidentally differencing a huge model;
    pass None (or a larger cap) to check bigger fragments explicitly.
    """
    params = layer.params()
    n_params = sum(p.data.size for p in params)
    if max_params is not None and n_params > max_params:
        raise ValueError(
            f"fragment has {n_params} parameters, above the {max_params} cap; "
            "raise max_params to check it anyway"
        )

    saved = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
    x = x.astype(np.float64)
    rng = np.random.default_rng(seed)

    try:
        y = layer.forward(x, training=True)
        probe = rng.standard_normal(y.shape)
        dx = layer.backward(probe.copy())
        analytic = {f"param{i}": p.grad.copy() for i, p in enumerate(params)}
        if check_input:
            analytic["input"] = np.asarray(dx, dtype=np.float64).copy()

        def loss_at() -> float:
            return float(np.sum(layer.forward(x, training=True) * probe))

        worst = ("", 0.0)
        for name, arr, grad in [
            (f"param{i}", p.data, analytic[f"param{i}"]) for i, p in enumerate(params)
        ] + ([("input", x, analytic["input"])] if check_input else []):
            numeric = np.empty_like(grad)
            flat = arr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                hi = loss_at()
                flat[j] = orig - step
                lo = loss_at()
                flat[j] = orig
                numeric.reshape(-1)[j] = (hi - lo) / (2 * step)
            err = _rel_error(grad, numeric)
            if err > worst[1]:
                worst = (name, err)
    finally:
        for p, data in zip(params, saved):
            p.data = data
            p.grad = None

    return GradCheckReport(max_rel_error=worst[1], worst_param=worst[0], tolerance=tolerance)
