"""Binary checkpoint format.

Layout (little-endian)::

    b"MSFN" | u32 version | u32 config hash | u32 text length | UTF-8 JSON text
    repeated: u16 name length | name | u8 dtype (0 = float32) | u8 ndim | ndim x u32 | payload

The JSON text holds the model config and training metadata. Adam moments are
stored as extra records named ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, canonical_json
from .network import Network

MAGIC = b"MSFN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4")}
_M_PREFIX = "adam.m/"
_V_PREFIX = "adam.v/"


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    config_hash: int = 0

    @classmethod
    def from_network(cls, net: Network, metadata: dict | None = None, with_optimizer: bool = True) -> "Checkpoint":
        store = net.store
        meta = dict(metadata or {})
        meta.setdefault("adam_step", store.step)
        return cls(
            config=net.config,
            tensors={k: v.copy() for k, v in store.state_arrays().items()},
            metadata=meta,
            adam_m={k: v.copy() for k, v in store.adam_m.items()} if with_optimizer else {},
            adam_v={k: v.copy() for k, v in store.adam_v.items()} if with_optimizer else {},
            config_hash=net.config.config_hash(),
        )

    def build(self, config: ModelConfig | None = None, allow_mismatch: bool = False,
              with_optimizer: bool = True) -> Network:
        """Instantiate a network and load the stored tensors into it.

        ``config`` lets a caller fine-tune under a different seed or input size;
        a different topology hash is refused unless ``allow_mismatch`` is set,
        in which case only tensors with matching names and shapes are copied.
        """
        cfg = config or self.config
        if cfg.config_hash() != self.config_hash and not allow_mismatch:
            raise CheckpointError(
                f"checkpoint config hash {self.config_hash:08x} ({self.config.label()}) does not match "
                f"requested config {cfg.config_hash():08x} ({cfg.label()})"
            )
        net = Network(cfg)
        for name, t in net.store.items():
            arr = self.tensors.get(name)
            if arr is None or arr.shape != t.shape:
                if allow_mismatch:
                    continue
                raise CheckpointError(f"checkpoint is missing tensor {name!r} with shape {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
        if with_optimizer and self.adam_m:
            for name, _ in net.store.trainable():
                if name in self.adam_m and self.adam_m[name].shape == net.store[name].shape:
                    net.store.adam_m[name] = self.adam_m[name].copy()
                    net.store.adam_v[name] = self.adam_v[name].copy()
            net.store.step = int(self.metadata.get("adam_step", 0))
        return net


def _text(ckpt: Checkpoint) -> bytes:
    return canonical_json({"model_config": ckpt.config.to_dict(), "metadata": ckpt.metadata}).encode("utf-8")


def _record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"tensor name too long: {name[:40]}...")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", 0, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(obj: Network | Checkpoint, path: str | os.PathLike, metadata: dict | None = None) -> Path:
    ckpt = obj if isinstance(obj, Checkpoint) else Checkpoint.from_network(obj, metadata)
    if metadata is not None and isinstance(obj, Checkpoint):
        ckpt.metadata.update(metadata)
    text = _text(ckpt)
    parts = [MAGIC, struct.pack("<III", VERSION, ckpt.config_hash, len(text)), text]
    for name, arr in ckpt.tensors.items():
        parts.append(_record(name, arr))
    for name in ckpt.adam_m:
        parts.append(_record(_M_PREFIX + name, ckpt.adam_m[name]))
        parts.append(_record(_V_PREFIX + name, ckpt.adam_v[name]))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, "
                                  f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def done(self) -> bool:
        return self.pos == len(self.buf)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Parse a checkpoint file completely before returning anything."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an MSFN checkpoint")
    version, chash, tlen = r.unpack("<III")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        payload = json.loads(r.take(tlen).decode("utf-8"))
        config = ModelConfig.from_dict(payload["model_config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt config text ({exc})") from exc
    if config.config_hash() != chash:
        raise CheckpointError(f"{path}: stored config hash {chash:08x} does not match its config text")
    tensors, adam_m, adam_v = {}, {}, {}
    while not r.done:
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        dtype_code, ndim = r.unpack("<BB")
        if dtype_code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {dtype_code} for {name!r}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[dtype_code]
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(dims).astype(np.float32)
        if name.startswith(_M_PREFIX):
            adam_m[name[len(_M_PREFIX):]] = arr
        elif name.startswith(_V_PREFIX):
            adam_v[name[len(_V_PREFIX):]] = arr
        else:
            tensors[name] = arr
    if set(adam_m) != set(adam_v):
        raise CheckpointError(f"{path}: optimizer moments are incomplete")
    return Checkpoint(config=config, tensors=tensors, metadata=payload.get("metadata", {}),
                      adam_m=adam_m, adam_v=adam_v, config_hash=chash)


def load_model(path: str | os.PathLike, config: ModelConfig | None = None, allow_mismatch: bool = False) -> Network:
    return load_checkpoint(path).build(config, allow_mismatch=allow_mismatch)
