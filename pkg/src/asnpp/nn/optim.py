"""Optimizers and the training schedule knobs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Parameter


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    lr_decay_epoch: int | None = 20  # lr drops by 10x once here; None disables
    end_epoch: int = 40
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.end_epoch < 0:
            raise ValueError("end_epoch must be nonnegative")
        if self.lr_decay_epoch is not None and self.end_epoch > 0:
            if not 0 < self.lr_decay_epoch < self.end_epoch:
                raise ValueError("lr_decay_epoch must lie strictly inside (0, end_epoch)")

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate in effect for a 0-based epoch index."""
        if self.lr_decay_epoch is not None and epoch >= self.lr_decay_epoch:
            return self.lr * 0.1
        return self.lr


class SGD:
    def __init__(self, params: list[Parameter], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= (self.lr * p.grad).astype(p.data.dtype)


class Adam:
    def __init__(
        self,
        params: list[Parameter],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype)


def make_optimizer(name: str, params: list[Parameter], lr: float):
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}, expected 'sgd' or 'adam'")
