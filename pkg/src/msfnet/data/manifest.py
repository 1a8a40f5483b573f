"""JSON dataset manifests: {name, root, seed, entries: [{image, mask, split}]}."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .sample import SPLITS, Sample, SampleError, load_mask, load_rgb, save_mask, save_png

DEFAULT_FRACTIONS = (0.8, 0.0, 0.2)  # train, val, test for entries without a split tag


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    mask: str
    split: str | None = None


@dataclass
class DatasetManifest:
    name: str
    root: Path
    seed: int = 0
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        for e in self.entries:
            if e.split is not None and e.split not in SPLITS:
                raise ManifestError(f"entry {e.image}: unknown split {e.split!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def splits(self, fractions=DEFAULT_FRACTIONS) -> list[str]:
        """Split tag of every entry; untagged entries are assigned by a seeded permutation."""
        tags = [e.split for e in self.entries]
        free = [i for i, t in enumerate(tags) if t is None]
        if free:
            if abs(sum(fractions) - 1.0) > 1e-9:
                raise ManifestError(f"split fractions must sum to 1, got {fractions}")
            order = np.random.default_rng(self.seed).permutation(len(free))
            n_train = int(round(fractions[0] * len(free)))
            n_val = int(round(fractions[1] * len(free)))
            for rank, j in enumerate(order):
                i = free[j]
                tags[i] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
        return tags

    def check_files(self) -> None:
        missing = []
        for e in self.entries:
            for rel in (e.image, e.mask):
                if not self.resolve(rel).is_file():
                    missing.append(rel)
        if missing:
            raise ManifestError(f"{self.name}: missing files: {', '.join(missing)}")

    def to_dict(self) -> dict:
        return {"name": self.name, "root": str(self.root), "seed": self.seed,
                "entries": [{"image": e.image, "mask": e.mask, "split": e.split} for e in self.entries]}

    def save(self, path: str | Path) -> Path:
        """Write JSON; a root equal to the manifest's own directory is stored as "." so the tree can move."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        d = self.to_dict()
        if self.root.resolve() == path.parent.resolve():
            d["root"] = "."
        path.write_text(json.dumps(d, indent=2))
        return path


def load_manifest(path: str | Path, check: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("entries", []), list):
        raise ManifestError(f"{path}: manifest must be an object with an 'entries' list")
    root = Path(raw.get("root", "."))
    if not root.is_absolute():
        root = path.parent / root
    try:
        entries = [ManifestEntry(str(e["image"]), str(e["mask"]), e.get("split")) for e in raw.get("entries", [])]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: every entry needs 'image' and 'mask'") from exc
    m = DatasetManifest(name=str(raw.get("name", path.stem)), root=root, seed=int(raw.get("seed", 0)),
                        entries=entries)
    if check:
        m.check_files()
    return m


def load_entry(manifest: DatasetManifest, index: int, split: str | None = None) -> Sample:
    e = manifest.entries[index]
    image = load_rgb(manifest.resolve(e.image))
    mask = load_mask(manifest.resolve(e.mask))
    if mask.shape != image.shape[:2]:
        raise SampleError(f"{e.image}: mask size {mask.shape} does not match image size {image.shape[:2]}")
    return Sample(id=Path(e.image).stem, image=image, mask=mask, split=split or e.split).validate()


def iterate_samples(manifest: DatasetManifest, split: str | None = None,
                    fractions=DEFAULT_FRACTIONS) -> Iterator[Sample]:
    """Samples of ``split`` (all when None) in manifest order."""
    tags = manifest.splits(fractions)
    for i, tag in enumerate(tags):
        if split is None or tag == split:
            yield load_entry(manifest, i, tag)


def write_samples(samples, out_dir: str | Path, name: str = "synthetic", seed: int = 0) -> DatasetManifest:
    """Save samples as PNG image/mask pairs plus a manifest.json next to them."""
    out_dir = Path(out_dir)
    entries = []
    for s in samples:
        img_rel, mask_rel = f"images/{s.id}.png", f"masks/{s.id}.png"
        save_png(s.image, out_dir / img_rel)
        save_mask(s.mask, out_dir / mask_rel)
        entries.append(ManifestEntry(img_rel, mask_rel, s.split))
    m = DatasetManifest(name=name, root=out_dir, seed=seed, entries=entries)
    m.save(out_dir / "manifest.json")
    return m
