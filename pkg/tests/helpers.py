"""Shared fixtures for the model, training and acceptance tests."""

from __future__ import annotations

import numpy as np

from msfnet.model import ModelConfig, Network
from msfnet.nncore import bce_loss, numerical_grad, relative_error

TEST_LADDER = (4, 8, 8, 8, 8)

# Fusion x skip x signal-set cells of the fusion and skip-connection ablations:
# both fusion modes with the image-only skip, plus the other two skip modes under MS.
SIGNAL_SETS = (("DCT",), ("SB",), ("DCT", "SB"))
TABLE_CONFIGS = tuple(
    [(fusion, "image", sig) for fusion in ("MS", "MC") for sig in SIGNAL_SETS]
    + [("MS", skip, sig) for skip in ("none", "all") for sig in SIGNAL_SETS]
)


def tiny_config(fusion="MS", signals=("SB",), skip="image", size=32, seed=0) -> ModelConfig:
    return ModelConfig(fusion=fusion, signals=signals, skip=skip, input_size=size,
                       encoder_channels=TEST_LADDER, seed=seed)


def random_inputs(config: ModelConfig, n: int, rng: np.random.Generator, dtype=np.float32) -> dict:
    s = config.input_size
    out = {"image": rng.random((n, 3, s, s)).astype(dtype)}
    for sig in config.signals:
        out[sig] = rng.random((n, 1, s, s)).astype(dtype)
    return out


def random_mask(n: int, size: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Rectangular blobs so both classes are present."""
    m = np.zeros((n, 1, size, size), dtype=dtype)
    for i in range(n):
        y, x = rng.integers(0, size // 2, 2)
        h, w = rng.integers(size // 4, size // 2, 2)
        m[i, 0, y:y + h, x:x + w] = 1
    return m


def end_to_end_gradient_error(seed: int, n_tensors: int = 30, step: float = 1e-5) -> float:
    """Relative error between backprop and central differences of the BCE loss of
    the tiny float64 network, over one random entry of each of ``n_tensors``
    randomly chosen parameter tensors."""
    rng = np.random.default_rng(seed)
    fusion = ("MS", "MC")[seed % 2]
    skip = ("none", "image", "all")[seed % 3]
    cfg = tiny_config(fusion=fusion, signals=("DCT", "SB"), skip=skip, seed=seed)
    net = Network(cfg, dtype=np.float64)
    x = random_inputs(cfg, 2, rng, dtype=np.float64)
    y = random_mask(2, cfg.input_size, rng, dtype=np.float64)

    def loss() -> float:
        return bce_loss(net.forward(x, training=True), y)[0]

    net.store.zero_grad()
    _, g = bce_loss(net.forward(x, training=True), y)
    net.backward(g)
    analytic, numeric = [], []
    tensors = [t for _, t in net.store.trainable()]
    for k in rng.choice(len(tensors), size=min(n_tensors, len(tensors)), replace=False):
        t = tensors[k]
        idx = rng.integers(0, t.size, 1)
        analytic.append(t.grad.reshape(-1)[idx])
        numeric.append(numerical_grad(loss, t.data, step=step, indices=idx)[np.unravel_index(idx, t.shape)])
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def instrumented_decoder_inputs(net: Network) -> dict:
    """Wrap decoder layers 1 and 5 so the next forward records their input shapes."""
    seen: dict = {}
    first = net.decoder.upsample[0].layers[0]
    fifth = net.decoder.up5
    for key, layer in (("layer1", first), ("layer5", fifth)):
        orig = layer.forward

        def wrapped(x, training=False, _orig=orig, _key=key):
            seen[_key] = x.shape
            return _orig(x, training)

        layer.forward = wrapped
    return seen
