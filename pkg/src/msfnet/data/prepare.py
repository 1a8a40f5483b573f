"""Turn samples into fixed-size network inputs."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from ..signals import SignalMap, extract
from .sample import Sample


def resize_map(values: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a float map to size x size, clipped to the input's range."""
    v = np.asarray(values, dtype=np.float32)
    if v.shape == (size, size):
        return v.copy()
    out = np.array(Image.fromarray(v).resize((size, size), Image.BILINEAR), dtype=np.float32)
    return np.clip(out, float(v.min()), float(v.max()))


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """(h, w, 3) uint8 -> (3, size, size) float32 in [0, 1]."""
    img = np.asarray(image, dtype=np.uint8)
    if img.shape[:2] != (size, size):
        img = np.array(Image.fromarray(img).resize((size, size), Image.BILINEAR))
    return (img.astype(np.float32) / 255.0).transpose(2, 0, 1)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize, so the result stays in {0, 1}."""
    m = np.asarray(mask, dtype=np.uint8)
    if m.shape == (size, size):
        return m.copy()
    return np.array(Image.fromarray(m).resize((size, size), Image.NEAREST), dtype=np.uint8)


def attach_signals(sample: Sample, kinds: Iterable[str], cache=None, params: Mapping | None = None) -> Sample:
    """Compute (or fetch) missing signal maps at the sample's native resolution."""
    params = params or {}
    for kind in kinds:
        if kind in sample.signals:
            continue
        p = params.get(kind)
        sample.signals[kind] = (cache.get_or_compute(sample.image, kind, p) if cache is not None
                                else extract(sample.image, kind, p))
    return sample


def prepare_input(sample: Sample, config) -> dict[str, np.ndarray]:
    """Network-ready arrays for one sample.

    Keys: ``"image"`` (3, S, S), one (1, S, S) array per signal of the model
    config, and ``"mask"`` (1, S, S) with values in {0, 1}; S = input_size.
    """
    size = config.input_size
    sample.validate(config.signals)
    out = {"image": resize_image(sample.image, size)}
    for kind in config.signals:
        sig: SignalMap = sample.signals[kind]
        out[kind] = resize_map(sig.values, size)[None]
    out["mask"] = resize_mask(sample.mask, size)[None].astype(np.float32)
    return out


def stack_batch(items: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    return {k: np.stack([it[k] for it in items]) for k in items[0]}
