"""Forward and backward kernels on NCHW ndarrays.

Every kernel preserves the dtype of its inputs, so the same code runs in
float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
BCE_CLAMP = 1e-7

LAYER_KINDS = ("conv3x3", "conv1x1", "batchnorm", "relu", "maxpool2x2", "tconv2x2", "sigmoid", "concat")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        expected = {"conv3x3": (1, 1), "conv1x1": (1, 0), "tconv2x2": (2, 0), "maxpool2x2": (2, 0)}
        if self.kind in expected and (self.stride, self.padding) != expected[self.kind]:
            raise ValueError(
                f"{self.kind} requires stride={expected[self.kind][0]} padding={expected[self.kind][1]}, "
                f"got stride={self.stride} padding={self.padding}"
            )

    @property
    def kernel(self) -> int:
        return {"conv3x3": 3, "conv1x1": 1, "tconv2x2": 2, "maxpool2x2": 2}.get(self.kind, 0)

    @classmethod
    def conv3x3(cls, cin: int, cout: int) -> "LayerSpec":
        return cls("conv3x3", cin, cout, 1, 1)

    @classmethod
    def conv1x1(cls, cin: int, cout: int) -> "LayerSpec":
        return cls("conv1x1", cin, cout, 1, 0)

    @classmethod
    def tconv2x2(cls, cin: int, cout: int) -> "LayerSpec":
        return cls("tconv2x2", cin, cout, 2, 0)


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (n, c, h, w), got shape {x.shape}")


# ---------------------------------------------------------------- convolution

def _im2col_t(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Columns laid out as (c*k*k, n*h*w); inner copies stay contiguous rows."""
    n, c, h, w = x.shape
    if k == 1:
        return x.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, n, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * h * w)


def _check_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: LayerSpec) -> None:
    _check_4d(x, "conv input")
    if spec.kind not in ("conv3x3", "conv1x1"):
        raise ShapeError(f"conv2d needs a conv3x3/conv1x1 spec, got {spec.kind}")
    k = spec.kernel
    if weight.shape[2:] != (k, k):
        raise ShapeError(f"{spec.kind} weight must have kernel {k}x{k}, got {weight.shape[2:]}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} do not match weight input channels {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias length {bias.shape} does not match output channels {weight.shape[0]}")


def _cols_to_nchw(y: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(y.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Same-size convolution; weight is (c_out, c_in, k, k)."""
    _check_conv(x, weight, bias, spec)
    n, _, h, w = x.shape
    cout = weight.shape[0]
    y = weight.reshape(cout, -1) @ _im2col_t(x, spec.kernel, spec.padding)
    y += bias[:, None]
    return _cols_to_nchw(y, n, h, w)


def conv2d_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray, spec: LayerSpec):
    """Return (dx, dweight, dbias).

    Columns are rebuilt rather than cached; the input gradient is the same-size
    convolution of ``dout`` with the spatially flipped, channel-swapped kernel.
    """
    n, c, h, w = x.shape
    cout = weight.shape[0]
    k, pad = spec.kernel, spec.padding
    dT = dout.transpose(1, 0, 2, 3).reshape(cout, n * h * w)
    dweight = (dT @ _im2col_t(x, k, pad).T).reshape(weight.shape)
    dbias = dT.sum(axis=1)
    if k == 1:
        dx = weight.reshape(cout, c).T @ dT
    else:
        flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, cout * k * k)
        dx = flipped @ _im2col_t(dout, k, pad)
    return _cols_to_nchw(dx, n, h, w), dweight, dbias


# ------------------------------------------------------- transpose convolution

def tconv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: LayerSpec) -> np.ndarray:
    """Kernel-2 stride-2 transpose convolution; weight is (c_in, c_out, 2, 2).

    Each input pixel writes a disjoint 2x2 output block, so the op is a single
    matmul followed by a pixel shuffle.
    """
    _check_4d(x, "tconv input")
    if spec.kind != "tconv2x2":
        raise ShapeError(f"tconv2d needs a tconv2x2 spec, got {spec.kind}")
    if weight.shape[2:] != (2, 2):
        raise ShapeError(f"tconv2x2 weight must have kernel 2x2, got {weight.shape[2:]}")
    n, c, h, w = x.shape
    if c != weight.shape[0]:
        raise ShapeError(f"input channels {c} do not match weight input channels {weight.shape[0]}")
    cout = weight.shape[1]
    if bias.shape != (cout,):
        raise ShapeError(f"bias length {bias.shape} does not match output channels {cout}")
    y = x.transpose(0, 2, 3, 1).reshape(n * h * w, c) @ weight.reshape(c, cout * 4)
    y = y.reshape(n, h, w, cout, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(n, cout, 2 * h, 2 * w)
    y += bias[None, :, None, None]
    return y


def tconv2d_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray):
    n, c, h, w = x.shape
    cout = weight.shape[1]
    dy = dout.reshape(n, cout, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(n * h * w, cout * 4)
    x2 = x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    dweight = (x2.T @ dy).reshape(weight.shape)
    dbias = dout.sum(axis=(0, 2, 3))
    dx = (dy @ weight.reshape(c, cout * 4).T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx), dweight, dbias


# ----------------------------------------------------------------- batch norm

class UninitializedStatsError(RuntimeError):
    pass


def batchnorm(x, gamma, beta, running_mean, running_var, mode: str, initialized: bool = True):
    """Per-channel batch normalization.

    In train mode the running statistics are updated in place (momentum 0.1,
    unbiased variance) and a cache for the backward pass is returned alongside
    the output. Eval mode returns ``(out, None)``.
    """
    _check_4d(x, "batchnorm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta length must equal channels {c}, got {gamma.shape}/{beta.shape}")
    if mode == "eval":
        if not initialized:
            raise UninitializedStatsError("uninitialized running statistics")
        scale = gamma / np.sqrt(running_var + BN_EPS)
        shift = beta - running_mean * scale
        return x * scale[None, :, None, None] + shift[None, :, None, None], None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=(0, 2, 3))
    xc = x - mean[None, :, None, None]
    var = np.mean(xc * xc, axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = xc * inv_std[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    unbiased = var * (m / max(m - 1, 1))
    running_mean *= 1.0 - BN_MOMENTUM
    running_mean += BN_MOMENTUM * mean
    running_var *= 1.0 - BN_MOMENTUM
    running_var += BN_MOMENTUM * unbiased
    return out, (xhat, inv_std, gamma)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dx = (inv_std / m)[None, :, None, None] * (
        m * dxhat - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return dx, dgamma, dbeta


def batchnorm_eval_backward(dout, gamma, running_var):
    scale = gamma / np.sqrt(running_var + BN_EPS)
    dx = dout * scale[None, :, None, None]
    return dx


# ---------------------------------------------------------------- activations

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign to keep exp() from overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # saturation would round to exactly 0 or 1; keep outputs strictly inside
    one = out.dtype.type(1)
    return np.clip(out, np.finfo(out.dtype).tiny, np.nextafter(one, out.dtype.type(0)), out=out)


def sigmoid_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * out * (1.0 - out)


# -------------------------------------------------------------------- pooling

def maxpool2x2(x: np.ndarray):
    """2x2 max pooling. Returns (out, argmax) with argmax in 0..3 row-major."""
    _check_4d(x, "maxpool input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(
            f"maxpool2x2 needs even height and width, got {h}x{w}; pad inputs to a multiple of 32 "
            "(see msfnet.data.prepare_input)"
        )
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first maximum wins ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = dout.shape
    onehot = idx[..., None] == np.arange(4)
    dwin = onehot * dout[..., None]
    return np.ascontiguousarray(
        dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )


# --------------------------------------------------------------------- concat

def concat_channels(inputs: list[np.ndarray]) -> np.ndarray:
    if not inputs:
        raise ShapeError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for i, t in enumerate(inputs):
        _check_4d(t, f"concat input {i}")
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(
                f"stream {i} has (n, h, w) = {(t.shape[0], t.shape[2], t.shape[3])}, "
                f"expected {(ref[0], ref[2], ref[3])}"
            )
    return np.concatenate(inputs, axis=1)


def concat_channels_backward(dout: np.ndarray, channels: list[int]) -> list[np.ndarray]:
    splits = np.cumsum(channels)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(dout, splits, axis=1)]


# ----------------------------------------------------------------------- loss

def bce_loss(pred: np.ndarray, target: np.ndarray, pos_weight: float | None = None):
    """Mean binary cross-entropy and its gradient with respect to ``pred``.

    ``pred`` is clamped to [1e-7, 1 - 1e-7] before the logarithm; the gradient is
    that of the clamped expression (zero where the clamp is active).
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("target must be binary (values in {0, 1})")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    w = 1.0 if pos_weight is None else np.where(target == 1, pos_weight, 1.0)
    n = pred.size
    losses = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)) * w
    loss = float(losses.sum(dtype=np.float64) / n)
    inside = (pred >= BCE_CLAMP) & (pred <= 1.0 - BCE_CLAMP)
    grad = (p - target) / (p * (1.0 - p)) * w / n * inside
    return loss, grad.astype(pred.dtype, copy=False)
