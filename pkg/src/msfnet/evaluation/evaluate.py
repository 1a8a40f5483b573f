"""Dataset evaluation, per-image reports and heatmap export."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from ..data import DatasetManifest, Sample, SampleError, attach_signals, iterate_samples, prepare_input
from ..model import Checkpoint, ModelConfig, Network, load_checkpoint
from ..signals import SignalError
from .metrics import roc_auc

log = logging.getLogger(__name__)

REFERENCE_POINT = {"config": "MS RGB+SB", "dataset": "CASIA", "auc": 0.898}
PROTOCOL = {
    "auc_resolution": "network input resolution; mask resized with nearest neighbour",
    "aggregation": "arithmetic mean of per-image AUCs; single-class masks skipped",
    "reference_point": REFERENCE_POINT,
}


def as_model(model) -> Network:
    """Accept a checkpoint path, a Checkpoint, a Network or any object with config and forward."""
    if isinstance(model, (str, Path)):
        return load_checkpoint(model).build()
    if isinstance(model, Checkpoint):
        return model.build()
    if hasattr(model, "forward") and isinstance(getattr(model, "config", None), ModelConfig):
        return model
    raise TypeError(f"cannot evaluate a {type(model).__name__}")


def config_summary(config: ModelConfig, ft: bool = False) -> dict:
    return {"signals": "+".join(("RGB",) + config.signals), "fusion": config.fusion,
            "skip": config.skip, "ft": bool(ft), "input_size": config.input_size}


@dataclass
class EvalReport:
    dataset: str
    model: dict
    image_ids: list[str] = field(default_factory=list)
    aucs: list[float] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: dict(PROTOCOL))

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs)) if self.aucs else float("nan")

    @property
    def n_images(self) -> int:
        return len(self.aucs)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)

    def to_dict(self) -> dict:
        mean = self.mean_auc
        return {"dataset": self.dataset, "model": self.model,
                "mean_auc": None if math.isnan(mean) else mean,
                "per_image": [{"id": i, "auc": a} for i, a in zip(self.image_ids, self.aucs)],
                "skipped": [{"id": i, "reason": r} for i, r in self.skipped],
                "metadata": self.metadata}

    def save(self, out_dir: str | Path, stem: str = "eval") -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.csv`` (id, auc, status) into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath = out_dir / f"{stem}.json"
        jpath.write_text(json.dumps(self.to_dict(), indent=2))
        cpath = out_dir / f"{stem}.csv"
        with cpath.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "auc", "status"])
            for i, a in zip(self.image_ids, self.aucs):
                w.writerow([i, f"{a:.10f}", "ok"])
            for i, r in self.skipped:
                w.writerow([i, "", f"skipped: {r}"])
        return jpath, cpath


def _samples(data, split: str | None) -> Iterable[Sample]:
    if isinstance(data, DatasetManifest):
        return iterate_samples(data, split)
    return data


def _dataset_name(data, name: str | None) -> str:
    if name:
        return name
    return data.name if isinstance(data, DatasetManifest) else "samples"


def predict_sample(net, sample: Sample, cache=None, signal_params=None) -> tuple[dict, np.ndarray]:
    """Prepared inputs and the (S, S) probability map for one sample."""
    attach_signals(sample, net.config.signals, cache, signal_params)
    item = prepare_input(sample, net.config)
    inputs = {k: v[None] for k, v in item.items() if k != "mask"}
    prob = net.forward(inputs, training=False)
    return item, np.asarray(prob, dtype=np.float64)[0, 0]


def evaluate(model, data, split: str | None = "test", cache=None, dataset: str | None = None,
             ft: bool = False, signal_params=None) -> EvalReport:
    """Per-image pixel AUC of ``model`` over a manifest split or a list of samples.

    Images whose signals cannot be computed, or whose resized mask has a single
    class, are listed in ``skipped`` with the reason.
    """
    net = as_model(model)
    report = EvalReport(_dataset_name(data, dataset), config_summary(net.config, ft))
    for sample in _samples(data, split):
        try:
            item, prob = predict_sample(net, sample, cache, signal_params)
        except (SignalError, SampleError) as exc:
            report.skipped.append((sample.id, f"signal unavailable: {exc}"))
            continue
        auc = roc_auc(prob, item["mask"][0])
        if math.isnan(auc):
            report.skipped.append((sample.id, "undefined AUC: single-class mask"))
            continue
        report.image_ids.append(sample.id)
        report.aucs.append(auc)
    log.info("%s on %s: mean AUC %.4f over %d images (%d skipped)", net.config.label(), report.dataset,
             report.mean_auc, report.n_images, report.n_skipped)
    return report


# ------------------------------------------------------------------ heatmaps

def to_uint8(prob: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(prob, 0.0, 1.0) * 255.0).astype(np.uint8)


def composite(item: dict[str, np.ndarray], prob: np.ndarray, signals: tuple[str, ...]) -> np.ndarray:
    """Side-by-side RGB panel: image | signals... | mask | prediction."""
    panels = [to_uint8(item["image"].transpose(1, 2, 0))]
    for kind in signals:
        panels.append(np.repeat(to_uint8(item[kind][0])[..., None], 3, axis=2))
    panels.append(np.repeat(to_uint8(item["mask"][0])[..., None], 3, axis=2))
    panels.append(np.repeat(to_uint8(prob)[..., None], 3, axis=2))
    return np.concatenate(panels, axis=1)


def export_heatmaps(model, data, out_dir: str | Path, split: str | None = "test", cache=None,
                    signal_params=None) -> list[Path]:
    """Write ``<id>_heatmap.png`` and ``<id>_composite.png`` per image; returns the written paths."""
    net = as_model(model)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc
    written = []
    for sample in _samples(data, split):
        try:
            item, prob = predict_sample(net, sample, cache, signal_params)
        except (SignalError, SampleError) as exc:
            log.warning("skipping %s: %s", sample.id, exc)
            continue
        hp = out_dir / f"{sample.id}_heatmap.png"
        Image.fromarray(to_uint8(prob)).save(hp)
        cp = out_dir / f"{sample.id}_composite.png"
        Image.fromarray(composite(item, prob, net.config.signals)).save(cp)
        written += [hp, cp]
    return written
