"""Minimal deterministic CNN engine: layers, autograd, optimizers.

Public tensors are NCHW float32; layers compute in NHWC internally for
cache-friendly window gathering (see :mod:`asnpp.kernels`).
"""

from .tensor import Tensor, nchw_to_nhwc, nhwc_to_nchw
from .layers import (
    Parameter,
    Conv2d,
    BatchNorm2d,
    ReLU,
    ResidualBlock,
    Sequential,
    add,
    concat_channels,
    mse_loss,
)
from .optim import TrainConfig, SGD, Adam, make_optimizer
from .gradcheck import grad_check, GradCheckReport
from .serialize import ModelWeights, save_weights, load_weights

__all__ = [
    "Tensor",
    "nchw_to_nhwc",
    "nhwc_to_nchw",
    "Parameter",
    "Conv2d",
    "BatchNorm2d",
    "ReLU",
    "ResidualBlock",
    "Sequential",
    "add",
    "concat_channels",
    "mse_loss",
    "TrainConfig",
    "SGD",
    "Adam",
    "make_optimizer",
    "grad_check",
    "GradCheckReport",
    "ModelWeights",
    "save_weights",
    "load_weights",
]
