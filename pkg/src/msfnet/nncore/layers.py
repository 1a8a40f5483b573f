"""Stateful layers built on the functional kernels.

A layer registers its tensors in a shared :class:`ParamStore` under a dotted
prefix, caches what its backward pass needs during ``forward`` and
accumulates parameter gradients in ``backward``.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .functional import LayerSpec
from .tensor import ParamStore, Tensor


class Layer:
    spec: LayerSpec | None = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Layer):
    def __init__(self, store: ParamStore, name: str, spec: LayerSpec, rng: np.random.Generator):
        if spec.kind not in ("conv3x3", "conv1x1"):
            raise ValueError(f"Conv2d needs a conv spec, got {spec.kind}")
        if spec.in_channels < 1 or spec.out_channels < 1:
            raise ValueError(f"invalid channel counts for {name}: {spec.in_channels}->{spec.out_channels}")
        self.spec = spec
        k = spec.kernel
        shape = (spec.out_channels, spec.in_channels, k, k)
        self.weight = store.add(f"{name}.weight", Tensor(uniform_fan_in(rng, shape, spec.in_channels * k * k)))
        self.bias = store.add(f"{name}.bias", Tensor(np.zeros(spec.out_channels)))
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return F.conv2d(x, self.weight.data, self.bias.data, self.spec)

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._x, self.weight.data, self.spec)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._x = None
        return dx


class ConvTranspose2x2(Layer):
    def __init__(self, store: ParamStore, name: str, spec: LayerSpec, rng: np.random.Generator):
        if spec.kind != "tconv2x2":
            raise ValueError(f"ConvTranspose2x2 needs a tconv2x2 spec, got {spec.kind}")
        self.spec = spec
        shape = (spec.in_channels, spec.out_channels, 2, 2)
        # every output pixel sees exactly one input pixel per input channel
        self.weight = store.add(f"{name}.weight", Tensor(uniform_fan_in(rng, shape, spec.in_channels)))
        self.bias = store.add(f"{name}.bias", Tensor(np.zeros(spec.out_channels)))
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return F.tconv2d(x, self.weight.data, self.bias.data, self.spec)

    def backward(self, dout):
        dx, dw, db = F.tconv2d_backward(dout, self._x, self.weight.data)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._x = None
        return dx


class BatchNorm2d(Layer):
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.spec = LayerSpec("batchnorm", channels, channels)
        self.gamma = store.add(f"{name}.gamma", Tensor(np.ones(channels)))
        self.beta = store.add(f"{name}.beta", Tensor(np.zeros(channels)))
        self.running_mean = store.add(f"{name}.running_mean", Tensor(np.zeros(channels), requires_grad=False))
        self.running_var = store.add(f"{name}.running_var", Tensor(np.ones(channels), requires_grad=False))
        self.tracked = store.add(f"{name}.num_batches_tracked", Tensor(np.zeros(1), requires_grad=False))
        self._cache = None
        self._mode = None

    @property
    def initialized(self) -> bool:
        return bool(self.tracked.data[0] > 0)

    def forward(self, x, training=False):
        mode = "train" if training else "eval"
        out, cache = F.batchnorm(
            x, self.gamma.data, self.beta.data, self.running_mean.data, self.running_var.data,
            mode, initialized=self.initialized,
        )
        if training:
            self.tracked.data[0] += 1
        self._cache, self._mode = cache, mode
        return out

    def backward(self, dout):
        if self._mode == "eval":
            dx = F.batchnorm_eval_backward(dout, self.gamma.data, self.running_var.data)
            return dx
        dx, dgamma, dbeta = F.batchnorm_backward(dout, self._cache)
        self.gamma.accumulate(dgamma)
        self.beta.accumulate(dbeta)
        self._cache = None
        return dx


class ReLU(Layer):
    spec = LayerSpec("relu")

    def forward(self, x, training=False):
        self._x = x
        return F.relu(x)

    def backward(self, dout):
        return F.relu_backward(dout, self._x)


class Sigmoid(Layer):
    spec = LayerSpec("sigmoid")

    def forward(self, x, training=False):
        self._out = F.sigmoid(x)
        return self._out

    def backward(self, dout):
        return F.sigmoid_backward(dout, self._out)


class MaxPool2x2(Layer):
    spec = LayerSpec("maxpool2x2", stride=2)

    def forward(self, x, training=False):
        out, self._idx = F.maxpool2x2(x)
        return out

    def backward(self, dout):
        return F.maxpool2x2_backward(dout, self._idx)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
