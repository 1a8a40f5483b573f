"""End-to-end training and fine-tuning with binary cross-entropy and Adam."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetManifest, Sample, attach_signals, iterate_samples, prepare_input, stack_batch
from .model import Checkpoint, ModelConfig, Network, load_checkpoint, save_checkpoint
from .nncore import adam_step, bce_loss

log = logging.getLogger(__name__)

BEST_NAME = "best.msfn"
LAST_NAME = "last.msfn"


class TrainError(RuntimeError):
    pass


class DivergenceError(TrainError):
    """Non-finite loss or gradient; carries where it happened."""

    def __init__(self, epoch: int, batch: int, loss: float, max_grad: float):
        self.epoch, self.batch, self.loss, self.max_grad = epoch, batch, loss, max_grad
        super().__init__(f"non-finite training state at epoch {epoch}, batch {batch}: "
                         f"loss={loss}, max |grad|={max_grad}")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.1
    init_checkpoint: str | None = None
    out_dir: str | None = None
    pos_weight: bool = False
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig.from_dict(self.model))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)

    def summary(self) -> str:
        return f"epochs={self.epochs} batch={self.batch_size} lr={self.lr:g}"


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)  # epoch, train, val, seconds
    best_epoch: int = -1
    checkpoint_path: str | None = None
    fine_tune: bool = False
    config: dict = field(default_factory=dict)

    @property
    def best_val_loss(self) -> float:
        return self.rows[self.best_epoch - 1][2] if self.best_epoch > 0 else float("nan")

    def add(self, epoch: int, train_loss: float, val_loss: float, seconds: float) -> bool:
        """Append one epoch; returns True when it is the new best."""
        self.rows.append((epoch, train_loss, val_loss, seconds))
        if self.best_epoch < 0 or val_loss < self.best_val_loss:
            self.best_epoch = epoch
            return True
        return False

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for e, tl, vl, s in self.rows:
                w.writerow([e, f"{tl:.8f}", f"{vl:.8f}", f"{s:.3f}"])
        return path

    def summary(self) -> dict:
        return {"epochs_completed": len(self.rows), "best_epoch": self.best_epoch,
                "best_val_loss": self.best_val_loss, "checkpoint": self.checkpoint_path,
                "fine_tune": self.fine_tune, "config": self.config}

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


# ------------------------------------------------------------------ data plumbing

def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train_idx, val_idx) partition with at least one sample on each side."""
    if n < 2:
        raise TrainError(f"need at least 2 samples to carve a validation split, got {n}")
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def prepare_samples(samples: Sequence[Sample], config: ModelConfig, cache=None, workers: int = 1,
                    signal_params=None) -> list[dict[str, np.ndarray]]:
    """Attach signals and convert every sample; order is preserved for any worker count."""

    def one(s: Sample):
        attach_signals(s, config.signals, cache, signal_params)
        return prepare_input(s, config)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, samples))
    return [one(s) for s in samples]


def _resolve_data(data, cfg: TrainConfig, cache=None):
    """(train samples, val samples) from a manifest or a list of samples."""
    if isinstance(data, DatasetManifest):
        train = list(iterate_samples(data, "train"))
        val = list(iterate_samples(data, "val"))
    else:
        train, val = list(data), []
    if not train:
        raise TrainError("no training samples")
    if not val:
        tr, va = split_validation(len(train), cfg.val_fraction, cfg.seed)
        train, val = [train[i] for i in tr], [train[i] for i in va]
    return train, val


def _inputs(batch: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in batch.items() if k != "mask"}


def batches(items: list[dict], order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield stack_batch([items[i] for i in order[start:start + size]])


def evaluate_loss(net: Network, items: list[dict], batch_size: int) -> float:
    """Pixel-mean BCE over ``items`` in eval mode."""
    if not items:
        raise TrainError("empty validation split")
    total, count = 0.0, 0
    for b in batches(items, np.arange(len(items)), batch_size):
        pred = net.forward(_inputs(b), training=False)
        loss, _ = bce_loss(pred, b["mask"].astype(pred.dtype))
        total += loss * pred.size
        count += pred.size
    return total / count


def calibrate_batchnorm(net: Network, items: list[dict], batch_size: int) -> None:
    """Populate batch-norm running statistics with train-mode passes and no parameter update."""
    for b in batches(items, np.arange(len(items)), batch_size):
        net.forward(_inputs(b), training=True)
    net.store.zero_grad()


def _max_grad(net: Network) -> float:
    vals = [float(np.max(np.abs(t.grad))) for _, t in net.store.trainable() if t.grad is not None]
    return max(vals) if vals else 0.0


# ------------------------------------------------------------------------ loops

def run_training(net: Network, cfg: TrainConfig, train_items: list[dict], val_items: list[dict],
                 fine_tune: bool = False) -> tuple[Checkpoint, TrainLog]:
    """The shared epoch loop over prepared arrays."""
    if not val_items:
        raise TrainError("empty validation split")
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    pos_weight = None
    if cfg.pos_weight:
        pos = sum(float(it["mask"].sum()) for it in train_items)
        total = sum(it["mask"].size for it in train_items)
        pos_weight = (total - pos) / max(pos, 1.0)
    tlog = TrainLog(fine_tune=fine_tune, config=cfg.to_dict())
    best: Checkpoint | None = None
    log.info("%s %s on %d train / %d val samples", "fine-tune" if fine_tune else "train",
             cfg.summary(), len(train_items), len(val_items))
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_items))
        total, count = 0.0, 0
        for bi, b in enumerate(batches(train_items, order, cfg.batch_size)):
            pred = net.forward(_inputs(b), training=True)
            loss, grad = bce_loss(pred, b["mask"].astype(pred.dtype), pos_weight)
            net.backward(grad)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(t.grad)) for _, t in net.store.trainable()):
                raise DivergenceError(epoch, bi, loss, _max_grad(net))
            adam_step(net.store, cfg.lr)
            total += loss * pred.size
            count += pred.size
        train_loss = total / count
        val_loss = evaluate_loss(net, val_items, cfg.batch_size)
        seconds = time.perf_counter() - t0
        improved = tlog.add(epoch, train_loss, val_loss, seconds)
        log.info("epoch %d train %.5f val %.5f (%.1fs)%s", epoch, train_loss, val_loss, seconds,
                 " *" if improved else "")
        if improved:
            meta = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "fine_tune": fine_tune}
            best = Checkpoint.from_network(net, meta)
            if out_dir:
                tlog.checkpoint_path = str(save_checkpoint(best, out_dir / BEST_NAME))
    if out_dir:
        save_checkpoint(net, out_dir / LAST_NAME, {"epoch": cfg.epochs, "fine_tune": fine_tune})
        tlog.write_csv(out_dir / "train_log.csv")
        tlog.write_json(out_dir / "train_summary.json")
    return best, tlog


def train(cfg: TrainConfig, data, cache=None, val_data=None, signal_params=None) -> tuple[Checkpoint, TrainLog]:
    """Train from scratch on a manifest (train/val splits) or a list of samples.

    Without an explicit validation set (``val_data`` or manifest "val"
    entries) a seeded ``val_fraction`` of the training samples is held out.
    """
    if cfg.init_checkpoint:
        return fine_tune(cfg, data, cache, val_data, signal_params)
    net = Network(cfg.model)
    return _fit(net, cfg, data, cache, val_data, signal_params, fine_tune=False)


def fine_tune(cfg: TrainConfig, data, cache=None, val_data=None, signal_params=None) -> tuple[Checkpoint, TrainLog]:
    """Continue training from ``cfg.init_checkpoint`` (weights and Adam moments)."""
    if not cfg.init_checkpoint:
        raise TrainError("fine-tuning needs init_checkpoint")
    net = load_checkpoint(cfg.init_checkpoint).build(cfg.model)
    return _fit(net, cfg, data, cache, val_data, signal_params, fine_tune=True)


def _fit(net, cfg, data, cache, val_data, signal_params, fine_tune):
    if val_data is not None:
        train_s = list(iterate_samples(data, "train")) if isinstance(data, DatasetManifest) else list(data)
        val_s = list(val_data)
    else:
        train_s, val_s = _resolve_data(data, cfg, cache)
    items = prepare_samples(train_s, cfg.model, cache, cfg.workers, signal_params)
    val_items = prepare_samples(val_s, cfg.model, cache, cfg.workers, signal_params)
    return run_training(net, cfg, items, val_items, fine_tune=fine_tune)


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
