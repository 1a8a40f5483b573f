from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from helpers import tiny_config
from msfnet.data import generate_splices
from msfnet.model import CheckpointError, Network, load_checkpoint, save_checkpoint
from msfnet.train import (
    DivergenceError,
    TrainConfig,
    TrainError,
    TrainLog,
    evaluate_loss,
    fine_tune,
    prepare_samples,
    run_training,
    split_validation,
    train,
)


@pytest.fixture(scope="module")
def samples():
    return generate_splices(10, size=128, seed=21)


@pytest.fixture(scope="module")
def items(samples):
    return prepare_samples(samples, tiny_config(signals=("SB",)))


def _cfg(tmp_path=None, **kw):
    base = dict(model=tiny_config(signals=("SB",)), epochs=2, batch_size=4, lr=1e-3, seed=0,
                out_dir=str(tmp_path) if tmp_path else None)
    base.update(kw)
    return TrainConfig(**base)


# ------------------------------------------------------------------ config

def test_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.lr) == (20, 16, 1e-4)
    assert cfg.summary() == "epochs=20 batch=16 lr=0.0001"
    assert cfg.pos_weight is False and cfg.init_checkpoint is None


@pytest.mark.parametrize("bad", [{"epochs": 0}, {"batch_size": 0}, {"lr": 0.0}, {"val_fraction": 1.0}, {"workers": 0}])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_zero_epoch_fine_tune_is_refused(tmp_path):
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0, init_checkpoint=str(tmp_path / "x.msfn"))


def test_config_dict_round_trip():
    cfg = _cfg(epochs=3, pos_weight=True)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# ------------------------------------------------------------------ data plumbing

def test_validation_split_is_seeded_partition():
    tr, va = split_validation(20, 0.1, 5)
    assert len(va) == 2 and len(tr) == 18
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(20))
    t2, v2 = split_validation(20, 0.1, 5)
    assert np.array_equal(tr, t2) and np.array_equal(va, v2)
    with pytest.raises(TrainError):
        split_validation(1, 0.1, 0)
    assert len(split_validation(3, 0.01, 0)[1]) == 1


def test_prepare_samples_is_order_stable_across_workers(samples):
    cfg = tiny_config(signals=("DCT",))
    a = prepare_samples(samples[:4], cfg, workers=1)
    b = prepare_samples(samples[:4], cfg, workers=3)
    for x, y in zip(a, b):
        assert all(np.array_equal(x[k], y[k]) for k in x)


def test_empty_validation_is_an_error(items):
    with pytest.raises(TrainError, match="empty validation"):
        run_training(Network(tiny_config(signals=("SB",))), _cfg(epochs=1), items, [])


def test_train_log_tracks_best():
    log = TrainLog()
    assert log.add(1, 0.5, 0.4, 1.0)
    assert not log.add(2, 0.4, 0.45, 1.0)
    assert log.add(3, 0.3, 0.35, 1.0)
    assert log.best_epoch == 3 and log.best_val_loss == 0.35


# ------------------------------------------------------------------ loop behaviour

def test_same_seed_same_epoch_one_loss(items):
    cfg = _cfg(epochs=1)
    _, a = run_training(Network(cfg.model), cfg, items[:8], items[8:])
    _, b = run_training(Network(cfg.model), cfg, items[:8], items[8:])
    assert abs(a.rows[0][1] - b.rows[0][1]) <= 1e-6
    assert abs(a.rows[0][2] - b.rows[0][2]) <= 1e-6


def test_artifacts_and_best_checkpoint_reproduce_val_loss(tmp_path, items):
    cfg = _cfg(tmp_path, epochs=3)
    best, log = run_training(Network(cfg.model), cfg, items[:8], items[8:])
    for name in ("best.msfn", "last.msfn", "train_log.csv", "train_summary.json"):
        assert (tmp_path / name).is_file(), name
    rows = list(csv.DictReader((tmp_path / "train_log.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    summary = json.loads((tmp_path / "train_summary.json").read_text())
    assert summary["best_epoch"] == log.best_epoch and summary["fine_tune"] is False
    ck = load_checkpoint(tmp_path / "best.msfn")
    assert ck.metadata["epoch"] == log.best_epoch
    reloaded = evaluate_loss(ck.build(), items[8:], cfg.batch_size)
    assert abs(reloaded - log.best_val_loss) <= 1e-5
    for name, arr in best.tensors.items():
        assert np.array_equal(ck.tensors[name], arr), name


def test_nan_loss_aborts_with_diagnostics(items):
    bad = [dict(it) for it in items[:4]]
    bad[1]["image"] = bad[1]["image"].copy()
    bad[1]["image"][0, 0, 0] = np.nan
    cfg = _cfg(epochs=1, batch_size=2)
    with pytest.raises(DivergenceError) as err:
        run_training(Network(cfg.model), cfg, bad, items[8:])
    e = err.value
    assert e.epoch == 1 and e.batch in (0, 1)
    assert "epoch 1" in str(e) and "max |grad|" in str(e)


def test_train_on_sample_list_carves_validation(samples):
    cfg = _cfg(epochs=1, model=tiny_config(signals=()), val_fraction=0.2)
    best, log = train(cfg, samples)
    assert best is not None and len(log.rows) == 1 and not log.fine_tune


def test_loss_stays_finite_and_parameters_change(items):
    cfg = _cfg(epochs=2, pos_weight=True)
    net = Network(cfg.model)
    before = {k: v.copy() for k, v in net.store.state_arrays().items()}
    _, log = run_training(net, cfg, items[:8], items[8:])
    assert all(np.isfinite(r[1]) and np.isfinite(r[2]) for r in log.rows)
    assert all(np.all(np.isfinite(t.data)) for _, t in net.store.items())
    assert any(not np.array_equal(before[k], t.data) for k, t in net.store.trainable())


# ------------------------------------------------------------------ fine-tuning

def test_fine_tune_requires_checkpoint(samples):
    with pytest.raises(TrainError):
        fine_tune(_cfg(epochs=1), samples)


def test_fine_tune_refuses_incompatible_checkpoint(tmp_path, samples):
    path = save_checkpoint(Network(tiny_config(fusion="MS", signals=("SB",))), tmp_path / "ms.msfn")
    cfg = _cfg(epochs=1, model=tiny_config(fusion="MC", signals=("SB",)), init_checkpoint=str(path))
    with pytest.raises(CheckpointError):
        fine_tune(cfg, samples)


def test_fine_tune_warm_start(tmp_path, samples, items):
    pre_dir, ft_dir = tmp_path / "pre", tmp_path / "ft"
    pre_cfg = _cfg(pre_dir, epochs=3)
    _, pre_log = run_training(Network(pre_cfg.model), pre_cfg, items[:8], items[8:])
    ft_cfg = _cfg(ft_dir, epochs=1, init_checkpoint=str(pre_dir / "best.msfn"))
    net = load_checkpoint(ft_cfg.init_checkpoint).build(ft_cfg.model)
    assert net.store.step > 0
    _, ft_log = run_training(net, ft_cfg, items[:8], items[8:], fine_tune=True)
    assert ft_log.fine_tune
    assert json.loads((ft_dir / "train_summary.json").read_text())["fine_tune"] is True
    assert ft_log.rows[0][2] <= pre_log.best_val_loss + 0.01
