"""Minimal deterministic numpy network kernel."""

from .functional import (
    BCE_CLAMP,
    BN_EPS,
    BN_MOMENTUM,
    LayerSpec,
    UninitializedStatsError,
    batchnorm,
    batchnorm_backward,
    batchnorm_eval_backward,
    bce_loss,
    concat_channels,
    concat_channels_backward,
    conv2d,
    conv2d_backward,
    maxpool2x2,
    maxpool2x2_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    tconv2d,
    tconv2d_backward,
)
from .gradcheck import numerical_grad, relative_error
from .layers import BatchNorm2d, Conv2d, ConvTranspose2x2, Layer, MaxPool2x2, ReLU, Sequential, Sigmoid
from .optim import DEFAULT_LR, MissingGradientError, adam_step
from .tensor import ParamStore, ShapeError, Tensor

__all__ = [
    "BCE_CLAMP", "BN_EPS", "BN_MOMENTUM", "DEFAULT_LR", "BatchNorm2d", "Conv2d", "ConvTranspose2x2",
    "Layer", "LayerSpec", "MaxPool2x2", "MissingGradientError", "ParamStore", "ReLU", "Sequential",
    "ShapeError", "Sigmoid", "Tensor", "UninitializedStatsError", "adam_step", "batchnorm",
    "batchnorm_backward", "batchnorm_eval_backward", "bce_loss", "concat_channels", "concat_channels_backward", "conv2d",
    "conv2d_backward", "maxpool2x2", "maxpool2x2_backward", "numerical_grad", "relative_error", "relu",
    "relu_backward", "sigmoid", "sigmoid_backward", "tconv2d", "tconv2d_backward",
]
