"""Command-line entry point: ``msfnet <subcommand> [options]``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    SignalCache,
    SpliceParams,
    generate_splices,
    iterate_samples,
    load_manifest,
    load_mask,
    load_rgb,
    splices_from_pools,
    write_samples,
)
from .data.sample import Sample
from .evaluation import AblationGrid, evaluate, export_heatmaps, run_ablation
from .model import ModelConfig, load_checkpoint
from .signals import DctParams, SbParams
from .train import TrainConfig, fine_tune, train

log = logging.getLogger("msfnet")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class CliConfigError(ValueError):
    pass


def default_config() -> dict:
    t = TrainConfig()
    return {
        "seed": 0,
        "model": ModelConfig().to_dict(),
        "train": {"epochs": t.epochs, "batch_size": t.batch_size, "lr": t.lr,
                  "val_fraction": t.val_fraction, "pos_weight": t.pos_weight},
        "signals": {"DCT": DctParams().to_dict(), "SB": SbParams().to_dict()},
        "synth": {"n": 10, "size": 256, **{k: v for k, v in SpliceParams().to_dict().items() if k != "seed"}},
        "cache": None,
    }


# ------------------------------------------------------------------ config plumbing

def parse_value(text: str):
    """JSON when it parses (numbers, lists, true/null), otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise CliConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise CliConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def merge(base: dict, update: dict, prefix: str = "") -> dict:
    for k, v in update.items():
        if k not in base:
            raise CliConfigError(f"unknown config key {prefix + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            merge(base[k], v, f"{prefix}{k}.")
        else:
            base[k] = v
    return base


def resolve_config(args) -> dict:
    """Defaults, then the ``--config`` file, then ``--set`` overrides, then dedicated flags."""
    cfg = default_config()
    if args.config:
        try:
            merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliConfigError(f"cannot read config {args.config}: {exc}") from exc
    for item in args.set or []:
        if "=" not in item:
            raise CliConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        set_dotted(cfg, key.strip(), parse_value(val))
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["model"]["seed"] = cfg["seed"]
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict(cfg["model"])


def train_config(cfg: dict, args, out_dir: Path, init: str | None = None) -> TrainConfig:
    return TrainConfig(model=model_config(cfg), seed=cfg["seed"], out_dir=str(out_dir), init_checkpoint=init,
                       workers=1 if args.deterministic else args.workers, **cfg["train"])


def signal_params(cfg: dict) -> dict:
    return {"DCT": DctParams(**cfg["signals"]["DCT"]), "SB": SbParams(**cfg["signals"]["SB"])}


def splice_params(cfg: dict) -> SpliceParams:
    s = {k: v for k, v in cfg["synth"].items() if k not in ("n", "size")}
    return SpliceParams(seed=cfg["seed"], **s)


def make_run_dir(args, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run = Path(args.out) / f"{args.command}-{stamp}-seed{seed}"
    if run.exists():
        if not args.force:
            raise FileExistsError(f"run directory {run} exists; pass --force to overwrite")
        shutil.rmtree(run)
    run.mkdir(parents=True)
    return run


def write_effective_config(run: Path, cfg: dict, args) -> Path:
    record = {"command": args.command, "config": cfg,
              "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}}
    path = run / "effective_config.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True))
    return path


def cache_for(cfg: dict, args) -> SignalCache:
    return SignalCache(cfg["cache"] or Path(args.out) / "cache")


def _list_images(folder: str) -> list[np.ndarray]:
    paths = sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise FileNotFoundError(f"no images found in {folder}")
    return [load_rgb(p) for p in paths]


# ------------------------------------------------------------------ subcommands

def cmd_extract(args, cfg, run: Path) -> None:
    cache = cache_for(cfg, args)
    params = signal_params(cfg)
    kinds = [k.upper() for k in (args.signal or ["dct", "sb"])]
    if args.image:
        images = [(Path(args.image).stem, load_rgb(args.image))]
    else:
        images = [(s.id, s.image) for s in iterate_samples(load_manifest(args.manifest))]
    maps = run / "maps"
    maps.mkdir()
    for name, image in images:
        for kind in kinds:
            cache.get_or_compute(image, kind, params[kind])
            key = cache.key(image, kind, params[kind])
            for suffix in (".png", ".txt"):
                shutil.copyfile(cache.root / f"{key}{suffix}", maps / f"{name}.{kind}{suffix}")
    log.info("extractor calls: %s", " ".join(f"{k}={cache.calls[k]}" for k in kinds))
    print(maps)


def cmd_synth(args, cfg, run: Path) -> None:
    if args.params:
        try:
            merge(cfg["synth"], json.loads(Path(args.params).read_text()), "synth.")
        except (OSError, json.JSONDecodeError) as exc:
            raise CliConfigError(f"cannot read splice params {args.params}: {exc}") from exc
    n = args.n if args.n is not None else cfg["synth"]["n"]
    params = splice_params(cfg)
    if args.hosts or args.donors:
        if not (args.hosts and args.donors):
            raise CliConfigError("--hosts and --donors must be given together")
        samples = splices_from_pools(_list_images(args.hosts), _list_images(args.donors), n, params, cfg["seed"])
    else:
        samples = generate_splices(n, cfg["synth"]["size"], params, seed=cfg["seed"])
    m = write_samples(samples, run, name="synthetic", seed=cfg["seed"])
    log.info("wrote %d splices to %s", len(m), run)
    print(run / "manifest.json")


def _train_like(args, cfg, run: Path, init: str | None) -> None:
    tcfg = train_config(cfg, args, run, init)
    log.info("%s %s", "finetune" if init else "train", tcfg.summary())
    if args.dry_run:
        return
    manifest = load_manifest(args.manifest)
    fn = fine_tune if init else train
    _, tlog = fn(tcfg, manifest, cache_for(cfg, args), signal_params=signal_params(cfg))
    print(tlog.checkpoint_path)


def cmd_train(args, cfg, run: Path) -> None:
    _train_like(args, cfg, run, None)


def cmd_finetune(args, cfg, run: Path) -> None:
    # the checkpoint decides the topology; flags may still change seed or input size
    ck = load_checkpoint(args.checkpoint)
    cfg["model"] = {**ck.config.to_dict(), "seed": cfg["seed"], "input_size": cfg["model"]["input_size"]}
    _train_like(args, cfg, run, args.checkpoint)


def cmd_eval(args, cfg, run: Path) -> None:
    report = evaluate(args.checkpoint, load_manifest(args.manifest), split=args.split,
                      cache=cache_for(cfg, args), ft=args.ft, signal_params=signal_params(cfg))
    jpath, _ = report.save(run)
    print(f"mean_auc={report.mean_auc:.6f} n_images={report.n_images} n_skipped={report.n_skipped}")
    print(jpath)


def cmd_ablate(args, cfg, run: Path) -> None:
    try:
        grid = AblationGrid.from_dict(json.loads(Path(args.grid).read_text()))
    except (OSError, ValueError, TypeError) as exc:
        raise CliConfigError(f"cannot read ablation grid {args.grid}: {exc}") from exc
    template = train_config(cfg, args, run)
    log.info("ablation over %d models, ft=%s; %s", len(grid.models(template.model)), list(grid.ft),
             template.summary())
    if args.dry_run:
        return
    datasets = {}
    for item in args.dataset or []:
        name, _, path = item.partition("=")
        if not path:
            raise CliConfigError(f"--dataset expects NAME=MANIFEST, got {item!r}")
        m = load_manifest(path)
        m.name = name
        datasets[name] = m
    table = run_ablation(grid, template, load_manifest(args.manifest), datasets or None, out_dir=run,
                         cache=cache_for(cfg, args), ft_epochs=args.ft_epochs, signal_params=signal_params(cfg))
    print(run / "ablation.csv")
    if table.failures:
        raise RuntimeError(f"{len(table.failures)} ablation cell(s) failed; see ablation_failures.json")


def cmd_predict(args, cfg, run: Path) -> None:
    image = load_rgb(args.image)
    mask = load_mask(args.mask) if args.mask else np.zeros(image.shape[:2], dtype=np.uint8)
    sample = Sample(id=Path(args.image).stem, image=image, mask=mask)
    written = export_heatmaps(args.checkpoint, [sample], run, cache=cache_for(cfg, args),
                              signal_params=signal_params(cfg))
    for p in written:
        print(p)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted-key override, e.g. model.fusion=MC (repeatable)")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--out", default="runs", help="parent directory for run directories (default: runs)")
    common.add_argument("--workers", type=int, default=1, help="parallel signal/data preparation workers")
    common.add_argument("--deterministic", action="store_true", help="single-threaded math and data path")
    common.add_argument("--force", action="store_true", help="allow overwriting an existing run directory")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    parser = argparse.ArgumentParser(prog="msfnet", description="Image splicing localization pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="compute signal maps")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--manifest")
    p.add_argument("--signal", action="append", choices=["dct", "sb"], help="signal to extract (repeatable)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic splice dataset")
    p.add_argument("--hosts", help="directory of host images (procedural when omitted)")
    p.add_argument("--donors", help="directory of donor images")
    p.add_argument("--n", type=int, help="number of splices")
    p.add_argument("--params", help="JSON file with splice parameters")
    p.set_defaults(func=cmd_synth)

    for name, fn, help_ in (("train", cmd_train, "train from scratch"),
                            ("finetune", cmd_finetune, "fine-tune a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--manifest", required=True)
        if name == "finetune":
            p.add_argument("--checkpoint", required=True)
        p.add_argument("--dry-run", action="store_true", help="resolve and record the config, then stop")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--ft", action="store_true", help="mark the report as a fine-tuned model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    p.add_argument("--grid", required=True, help="JSON with signals, fusion, skip and ft lists")
    p.add_argument("--manifest", required=True, help="pre-training dataset")
    p.add_argument("--dataset", action="append", metavar="NAME=MANIFEST", help="evaluation dataset (repeatable)")
    p.add_argument("--ft-epochs", type=int, help="epochs for fine-tuning cells")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", parents=[common], help="heatmap for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="optional ground-truth mask for the composite")
    p.set_defaults(func=cmd_predict)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        if args.workers < 1:
            raise CliConfigError("--workers must be >= 1")
        cfg = resolve_config(args)
        model_config(cfg)
        TrainConfig(**cfg["train"])
        signal_params(cfg)
    except (CliConfigError, ValueError, TypeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        run = make_run_dir(args, cfg["seed"])
        limit = contextlib.nullcontext()
        if args.deterministic:
            from threadpoolctl import threadpool_limits
            limit = threadpool_limits(1)
        write_effective_config(run, cfg, args)
        with limit:
            args.func(args, cfg, run)
        # subcommands may refine the config (splice params file, checkpoint topology)
        write_effective_config(run, cfg, args)
    except CliConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # report operational failures as a message and an exit code
        log.error("%s failed: %s", args.command, exc)
        log.debug("traceback", exc_info=True)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
