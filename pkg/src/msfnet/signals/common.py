from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_RANGE_GUARD = 1e-9


class SignalError(ValueError):
    pass


@dataclass
class SignalMap:
    values: np.ndarray  # (h, w) float, in [0, 1]
    kind: str
    source_size: tuple[int, int]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise SignalError(f"signal map must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0 or not np.all(np.isfinite(v))):
            raise SignalError("signal map values must lie in [0, 1]")
        self.values = v
        self.source_size = tuple(self.source_size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def as_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise SignalError(f"expected an (h, w, 3) RGB image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise SignalError("image is empty")
    return img[..., :3]


def rgb_to_luma(image: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma, Y = 0.299 R + 0.587 G + 0.114 B, in [0, 255]."""
    img = as_rgb(image).astype(np.float64)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a (numerically) constant input maps to all zeros."""
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = float(s.min()), float(s.max())
    if hi - lo < ZERO_RANGE_GUARD * max(1.0, abs(hi)):
        return np.zeros_like(s)
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def bilinear_resize(grid: np.ndarray, centers_y: np.ndarray, centers_x: np.ndarray,
                    out_h: int, out_w: int) -> np.ndarray:
    """Separable linear interpolation of ``grid`` sampled at the given pixel centres.

    Pixels outside the first/last centre take the edge value.
    """
    ys = np.arange(out_h, dtype=np.float64)
    xs = np.arange(out_w, dtype=np.float64)
    rows = np.stack([np.interp(xs, centers_x, row) for row in grid])  # (ny, out_w)
    return np.stack([np.interp(ys, centers_y, col) for col in rows.T], axis=1)
