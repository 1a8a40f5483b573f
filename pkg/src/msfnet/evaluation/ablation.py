"""Grid ablations over signal sets, fusion, skip mode and fine-tuning."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from ..data import DatasetManifest, Sample, iterate_samples
from ..model import SIGNAL_KINDS, ModelConfig
from ..train import TrainConfig, fine_tune, train
from .evaluate import EvalReport, evaluate

log = logging.getLogger(__name__)

CSV_HEADER = ["signals", "fusion", "skip", "ft", "dataset", "mean_auc", "n_images", "n_skipped"]
SKIP_LABELS = {"none": "No", "image": "Img", "all": "All"}


def parse_signal_set(spec) -> tuple[str, ...]:
    """``"RGB+SB"``, ``["DCT", "SB"]`` or ``"RGB"`` -> tuple of signal kinds."""
    parts = spec.split("+") if isinstance(spec, str) else list(spec)
    kinds = tuple(p.strip().upper() for p in parts if p.strip() and p.strip().upper() != "RGB")
    for k in kinds:
        if k not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal {k!r} in signal set {spec!r}")
    return kinds


def signal_label(kinds: Sequence[str]) -> str:
    return "+".join(("RGB",) + tuple(kinds))


@dataclass(frozen=True)
class AblationGrid:
    signals: tuple[tuple[str, ...], ...] = (("SB",),)
    fusion: tuple[str, ...] = ("MS", "MC")
    skip: tuple[str, ...] = ("image",)
    ft: tuple[bool, ...] = (False,)

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(parse_signal_set(s) for s in self.signals))
        object.__setattr__(self, "fusion", tuple(str(f).upper() for f in self.fusion))
        object.__setattr__(self, "ft", tuple(bool(f) for f in self.ft))
        # normalise skip labels through the model config's alias handling
        object.__setattr__(self, "skip", tuple(ModelConfig(skip=s).skip for s in self.skip))
        for name in ("signals", "fusion", "skip", "ft"):
            if not getattr(self, name):
                raise ValueError(f"ablation grid axis {name!r} is empty")

    @classmethod
    def from_dict(cls, d: Mapping) -> "AblationGrid":
        unknown = set(d) - {"signals", "fusion", "skip", "ft"}
        if unknown:
            raise ValueError(f"unknown ablation grid keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})

    def models(self, base: ModelConfig) -> list[ModelConfig]:
        return [replace(base, signals=s, fusion=f, skip=k)
                for s, f, k in itertools.product(self.signals, self.fusion, self.skip)]


@dataclass
class DatasetSplits:
    name: str
    train: list[Sample]
    test: list[Sample]
    val: list[Sample] | None = None

    @classmethod
    def from_manifest(cls, m: DatasetManifest) -> "DatasetSplits":
        val = list(iterate_samples(m, "val"))
        return cls(m.name, list(iterate_samples(m, "train")), list(iterate_samples(m, "test")), val or None)


@dataclass
class AblationRow:
    signals: str
    fusion: str
    skip: str
    ft: bool
    dataset: str
    mean_auc: float
    n_images: int
    n_skipped: int
    error: str | None = None

    def csv_row(self) -> list[str]:
        auc = "nan" if math.isnan(self.mean_auc) else f"{self.mean_auc:.6f}"
        return [self.signals, self.fusion, SKIP_LABELS[self.skip], "on" if self.ft else "off",
                self.dataset, auc, str(self.n_images), str(self.n_skipped)]


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)
    reports: list[EvalReport] = field(default_factory=list)

    @property
    def failures(self) -> list[AblationRow]:
        return [r for r in self.rows if r.error]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow(r.csv_row())
        return path

    def write_failures(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps([{"signals": r.signals, "fusion": r.fusion, "skip": r.skip, "ft": r.ft,
                                     "dataset": r.dataset, "error": r.error} for r in self.failures], indent=2))
        return path


def _as_splits(data, name: str | None = None) -> DatasetSplits:
    if isinstance(data, DatasetSplits):
        return data
    if isinstance(data, DatasetManifest):
        return DatasetSplits.from_manifest(data)
    raise TypeError(f"expected a DatasetManifest or DatasetSplits, got {type(data).__name__}")


def run_ablation(grid: AblationGrid, template: TrainConfig, pretrain, datasets: Mapping | None = None,
                 out_dir: str | Path | None = None, cache=None, ft_epochs: int | None = None,
                 signal_params=None) -> AblationTable:
    """Train every model of ``grid`` on ``pretrain`` and evaluate it on each dataset's test split.

    FT-on cells fine-tune the pre-trained checkpoint on the dataset's train
    split before evaluating. All cells share ``template.seed``. A failing cell
    is recorded with its error and the remaining cells still run.
    """
    pre = _as_splits(pretrain)
    targets = [_as_splits(d) for d in (datasets.values() if datasets else [pre])]
    table = AblationTable()
    with tempfile.TemporaryDirectory(prefix="ablation-") as tmp:
        root = Path(out_dir) if out_dir is not None else Path(tmp)
        for model in grid.models(template.model):
            tag = f"{model.fusion}_{signal_label(model.signals)}_{model.skip}"
            pre_dir = root / "cells" / tag / "pretrain"
            pre_cfg = replace(template, model=model, out_dir=str(pre_dir), init_checkpoint=None)
            pre_error = None
            try:
                train(pre_cfg, pre.train, cache, val_data=pre.val, signal_params=signal_params)
            except Exception as exc:  # a failed cell must not stop the grid
                pre_error = f"pre-training failed: {exc}"
                log.error("%s: %s", tag, pre_error)
            for ds, ft in itertools.product(targets, grid.ft):
                row = AblationRow(signal_label(model.signals), model.fusion, model.skip, ft, ds.name,
                                  float("nan"), 0, 0, pre_error)
                if pre_error is None:
                    try:
                        ckpt = pre_dir / "best.msfn"
                        if ft:
                            ft_dir = root / "cells" / tag / f"ft_{ds.name}"
                            ft_cfg = replace(pre_cfg, out_dir=str(ft_dir), init_checkpoint=str(ckpt),
                                             epochs=ft_epochs or template.epochs)
                            fine_tune(ft_cfg, ds.train, cache, val_data=ds.val, signal_params=signal_params)
                            ckpt = ft_dir / "best.msfn"
                        report = evaluate(ckpt, ds.test, cache=cache, dataset=ds.name, ft=ft,
                                          signal_params=signal_params)
                        row.mean_auc, row.n_images, row.n_skipped = report.mean_auc, report.n_images, report.n_skipped
                        table.reports.append(report)
                    except Exception as exc:
                        row.error = str(exc)
                        log.error("%s ft=%s on %s failed: %s", tag, ft, ds.name, exc)
                table.rows.append(row)
        if out_dir is not None:
            table.write_csv(root / "ablation.csv")
            if table.failures:
                table.write_failures(root / "ablation_failures.json")
    return table
