from __future__ import annotations

import numpy as np

from .tensor import ParamStore

DEFAULT_LR = 1e-4


class MissingGradientError(RuntimeError):
    pass


def adam_step(store: ParamStore, lr: float = DEFAULT_LR, betas=(0.9, 0.999), eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update over every trainable tensor in ``store``.

    Gradients are cleared afterwards and the shared step counter advances by one.
    """
    trainable = list(store.trainable())
    for name, t in trainable:
        if t.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for name, t in trainable:
        g = t.grad
        m = store.adam_m.get(name)
        if m is None:
            m = store.adam_m[name] = np.zeros_like(t.data)
            store.adam_v[name] = np.zeros_like(t.data)
        v = store.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(t.data.dtype, copy=False)
        t.grad = None
    return store
