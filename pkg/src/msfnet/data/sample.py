from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..signals import SignalMap

SPLITS = ("train", "val", "test")
MASK_THRESHOLD = 128


class SampleError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (h, w, 3) uint8
    mask: np.ndarray  # (h, w) uint8 in {0, 1}
    signals: dict[str, SignalMap] = field(default_factory=dict)
    split: str | None = None

    def validate(self, required_signals=()) -> "Sample":
        if self.image.ndim != 3 or self.image.shape[2] != 3 or self.image.dtype != np.uint8:
            raise SampleError(f"{self.id}: image must be (h, w, 3) uint8, got {self.image.shape} {self.image.dtype}")
        if self.mask.shape != self.image.shape[:2]:
            raise SampleError(f"{self.id}: mask size {self.mask.shape} != image size {self.image.shape[:2]}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise SampleError(f"{self.id}: mask values must be 0 or 1")
        for kind in required_signals:
            if kind not in self.signals:
                raise SampleError(f"{self.id}: missing signal {kind}")
            if self.signals[kind].shape != self.mask.shape:
                raise SampleError(f"{self.id}: signal {kind} size {self.signals[kind].shape} != {self.mask.shape}")
        if self.split is not None and self.split not in SPLITS:
            raise SampleError(f"{self.id}: unknown split {self.split!r}")
        return self


def load_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def binarize_mask(gray: np.ndarray, threshold: int = MASK_THRESHOLD) -> np.ndarray:
    return (np.asarray(gray) >= threshold).astype(np.uint8)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return binarize_mask(np.array(im.convert("L")))


def save_png(arr: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")
    return path


def save_mask(mask: np.ndarray, path: str | Path) -> Path:
    return save_png((np.asarray(mask) > 0).astype(np.uint8) * 255, path)
