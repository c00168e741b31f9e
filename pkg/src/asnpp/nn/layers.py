"""Layers with explicit forward/backward passes.

Activations flow as NHWC arrays.  Gradients are assigned (not accumulated)
on each backward call; every parameter feeds exactly one layer.  All layers
run in the dtype of their inputs so the finite-difference oracle can drive
them in float64.
"""

from __future__ import annotations

import numpy as np

from ..kernels import im2col


class Parameter:
    """Trainable array plus its gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.ascontiguousarray(data)
        self.grad: np.ndarray | None = None


class Layer:
    def params(self) -> list[Parameter]:
        return []

    def state(self) -> dict[str, np.ndarray]:
        """Named parameters and buffers, for serialization."""
        return {}

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, arr in self.state().items():
            src = state[prefix + name]
            if src.shape != arr.shape:
                raise ValueError(f"shape mismatch for {prefix + name}")
            arr[...] = src


def he_uniform(rng: np.random.Generator, k: int, cin: int, cout: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (k * k * cin))
    return rng.uniform(-limit, limit, size=(k, k, cin, cout)).astype(np.float32)


class Conv2d(Layer):
    """Same-padded 2-D convolution, stride 1, odd kernel."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator):
        if k % 2 == 0 or k < 1:
            raise ValueError(f"kernel size must be odd and positive, got {k}")
        self.cin, self.cout, self.k = cin, cout, k
        self.w = Parameter(he_uniform(rng, k, cin, cout))
        self.b = Parameter(np.zeros(cout, dtype=np.float32))
        self._x: np.ndarray | None = None

    def params(self):
        return [self.w, self.b]

    def state(self):
        return {"w": self.w.data, "b": self.b.data}

    def _cols(self, x: np.ndarray) -> np.ndarray:
        if self.k == 1:
            return x.reshape(-1, x.shape[-1])
        return im2col(x, self.k)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        n, h, w, cin = x.shape
        if cin != self.cin:
            raise ValueError(f"expected {self.cin} input channels, got {cin}")
        if training:
            self._x = x
        wmat = self.w.data.reshape(-1, self.cout)
        y = self._cols(x) @ wmat
        y += self.b.data
        return y.reshape(n, h, w, self.cout)

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        assert self._x is not None, "forward(training=True) must precede backward"
        x = self._x
        n, h, w, _ = x.shape
        dyf = dy.reshape(-1, self.cout)
        self.b.grad = dyf.sum(axis=0).astype(x.dtype)
        self.w.grad = (self._cols(x).T @ dyf).reshape(self.w.data.shape)
        if not need_dx:
            return None
        # Input gradient is itself a convolution of dy with the spatially
        # flipped, channel-transposed kernel.
        wrot = np.ascontiguousarray(
            self.w.data[::-1, ::-1].transpose(0, 1, 3, 2)
        ).reshape(-1, self.cin)
        if self.k == 1:
            dx = dyf @ wrot
        else:
            dx = im2col(dy, self.k) @ wrot
        return dx.reshape(n, h, w, self.cin)


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self._cache: tuple | None = None

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return {
            "gamma": self.gamma.data,
            "beta": self.beta.data,
            "running_mean": self.running_mean,
            "running_var": self.running_var,
        }

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[-1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[-1]}")
        flat = x.reshape(-1, self.channels)
        if training:
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mean
            self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        invstd = 1.0 / np.sqrt(var + self.eps)
        self._cache = (x, mean, invstd, training)
        # y = gamma * (x - mean) * invstd + beta, folded to one affine pass
        scale = self.gamma.data * invstd
        return x * scale + (self.beta.data - mean * scale)

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray:
        assert self._cache is not None
        x, mean, invstd, batch_stats = self._cache
        c = self.channels
        dyf = dy.reshape(-1, c)
        xhat = (x - mean) * invstd
        xhatf = xhat.reshape(-1, c)
        self.gamma.grad = np.einsum("mc,mc->c", dyf, xhatf)
        self.beta.grad = dyf.sum(axis=0)
        dxhat = dy * self.gamma.data
        if not batch_stats:
            return dxhat * invstd
        dxf = dxhat.reshape(-1, c)
        dx = invstd * (
            dxhat - dxf.mean(axis=0) - xhat * np.einsum("mc,mc->c", dxf, xhatf) / dxf.shape[0]
        )
        return dx


class ReLU(Layer):
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        # local first: concurrent inference threads may clobber the cache
        mask = x > 0
        self._mask = mask
        return x * mask

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray:
        assert self._mask is not None
        return dy * self._mask


class ResidualBlock(Layer):
    """conv3x3 -> batchnorm -> relu -> conv3x3 -> batchnorm, identity skip."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.bn1 = BatchNorm2d(channels)
        self.relu = ReLU()
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.bn2 = BatchNorm2d(channels)

    def params(self):
        return (
            self.conv1.params()
            + self.bn1.params()
            + self.conv2.params()
            + self.bn2.params()
        )

    def state(self):
        out = {}
        for name, sub in (
            ("conv1", self.conv1),
            ("bn1", self.bn1),
            ("conv2", self.conv2),
            ("bn2", self.bn2),
        ):
            for key, arr in sub.state().items():
                out[f"{name}.{key}"] = arr
        return out

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        y = self.conv1.forward(x, training)
        y = self.bn1.forward(y, training)
        y = self.relu.forward(y, training)
        y = self.conv2.forward(y, training)
        y = self.bn2.forward(y, training)
        return x + y

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray:
        d = self.bn2.backward(dy)
        d = self.conv2.backward(d)
        d = self.relu.backward(d)
        d = self.bn1.backward(d)
        d = self.conv1.backward(d)
        return dy + d


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def params(self):
        out = []
        for layer in self.layers:
            out += layer.params()
        return out

    def state(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for key, arr in layer.state().items():
                out[f"{i}.{key}"] = arr
        return out

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        for i, layer in enumerate(reversed(self.layers)):
            last = i == len(self.layers) - 1
            dy = layer.backward(dy, need_dx=need_dx or not last)
        return dy


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum; shapes must match exactly."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a + b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate two NHWC activations along the channel axis."""
    if a.shape[:3] != b.shape[:3]:
        raise ValueError(f"non-channel dims differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every element; returns (loss, dloss/dpred)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad
