"""On-disk signal map cache.

Entries are 16-bit grayscale PNGs named ``<imagehash>.<kind>.<paramshash>.png``
(value = round(map * 65535)) with a ``.txt`` sidecar holding the extractor
parameters as JSON.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from collections import Counter
from pathlib import Path

import numpy as np
from PIL import Image

from ..signals import SignalMap, default_params, extract

log = logging.getLogger(__name__)

SCALE = 65535


def image_hash(image: np.ndarray) -> str:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h = hashlib.sha256()
    h.update(repr(img.shape).encode())
    h.update(img.tobytes())
    return h.hexdigest()[:16]


def params_hash(kind: str, params) -> str:
    text = json.dumps({"kind": kind, "params": params.to_dict()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


class SignalCache:
    """Get-or-compute store with one computation per key at a time.

    ``calls`` counts extractor runs per kind, which makes cache hits observable.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.calls: Counter = Counter()
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def key(self, image: np.ndarray, kind: str, params) -> str:
        return f"{image_hash(image)}.{kind}.{params_hash(kind, params)}"

    def path(self, key: str) -> Path:
        return self.root / f"{key}.png"

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def _read(self, key: str, kind: str, shape: tuple[int, int]) -> SignalMap | None:
        path = self.path(key)
        if not path.exists():
            return None
        try:
            with Image.open(path) as im:
                arr = np.array(im)
            if arr.shape != shape or arr.dtype != np.uint16:
                raise ValueError(f"unexpected entry {arr.shape} {arr.dtype}, wanted {shape} uint16")
        except Exception as exc:  # any decoding problem means the entry is unusable
            log.warning("corrupt signal cache entry %s (%s); recomputing", path.name, exc)
            return None
        return SignalMap(arr.astype(np.float64) / SCALE, kind, shape)

    def _write(self, key: str, sig: SignalMap, params) -> None:
        data = np.rint(np.clip(sig.values, 0.0, 1.0) * SCALE).astype(np.uint16)
        for suffix, writer in ((".txt", lambda f: f.write(json.dumps(params.to_dict(), sort_keys=True).encode())),
                               (".png", lambda f: Image.fromarray(data).save(f, format="PNG"))):
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=suffix)
            try:
                with os.fdopen(fd, "wb") as f:
                    writer(f)
                os.replace(tmp, self.root / f"{key}{suffix}")
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise

    def get_or_compute(self, image: np.ndarray, kind: str, params=None) -> SignalMap:
        params = params if params is not None else default_params(kind)
        key = self.key(image, kind, params)
        shape = tuple(np.asarray(image).shape[:2])
        with self._lock(key):
            sig = self._read(key, kind, shape)
            if sig is not None:
                return sig
            self.calls[kind] += 1
            sig = extract(image, kind, params)
            self._write(key, sig, params)
            return sig
