from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

import oracles
from helpers import tiny_config
from msfnet.data import Sample, SignalCache, generate_splices
from msfnet.evaluation import (
    CSV_HEADER,
    REFERENCE_POINT,
    AblationGrid,
    DatasetSplits,
    composite,
    evaluate,
    export_heatmaps,
    parse_signal_set,
    predict_sample,
    roc_auc,
    run_ablation,
    to_uint8,
)
from msfnet.model import ModelConfig, Network, save_checkpoint
from msfnet.train import TrainConfig, calibrate_batchnorm, prepare_samples


class MaskStub:
    """Predicts the first image channel, so an image that encodes its mask is scored perfectly."""

    def __init__(self, size=64, signals=()):
        self.config = ModelConfig(signals=signals, input_size=size)

    def forward(self, inputs, training=False):
        return inputs["image"][:, :1].astype(np.float32)


def _mask_image_sample(rng, size=64, sid="m"):
    mask = np.zeros((size, size), np.uint8)
    y, x = rng.integers(0, size // 2, 2)
    mask[y:y + size // 3, x:x + size // 3] = 1
    img = np.repeat((mask * 255)[..., None], 3, axis=2).astype(np.uint8)
    return Sample(sid, img, mask)


def _balanced_random_sample(rng, size=64, sid="r"):
    mask = np.zeros((size, size), np.uint8)
    cut = int(rng.integers(size // 4, 3 * size // 4))
    if rng.random() < 0.5:
        mask[:cut] = 1
    else:
        mask[:, :cut] = 1
    return Sample(sid, rng.integers(0, 256, (size, size, 3)).astype(np.uint8), mask)


# ------------------------------------------------------------------ AUC

def test_auc_analytic_cases():
    rng = np.random.default_rng(0)
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    assert roc_auc(mask.astype(float), mask) == 1.0
    assert roc_auc(1.0 - mask, mask) == 0.0
    assert roc_auc(np.full(mask.shape, 0.3), mask) == 0.5


def test_auc_single_class_is_undefined():
    assert math.isnan(roc_auc(np.random.default_rng(0).random((4, 4)), np.zeros((4, 4))))
    assert math.isnan(roc_auc(np.random.default_rng(0).random((4, 4)), np.ones((4, 4))))


def test_auc_input_errors():
    with pytest.raises(ValueError):
        roc_auc(np.zeros(4), np.zeros(5))
    with pytest.raises(ValueError, match="binary"):
        roc_auc(np.zeros(4), np.array([0, 1, 2, 1]))
    with pytest.raises(ValueError, match="NaN"):
        roc_auc(np.array([0.1, np.nan, 0.2, 0.3]), np.array([0, 1, 0, 1]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([None, 4, 16]))
def test_auc_matches_threshold_sweep_and_pair_oracles(seed, levels):
    rng = np.random.default_rng(seed)
    pred = rng.random((16, 16))
    if levels:
        pred = np.round(pred * levels) / levels  # force ties
    mask = (rng.random((16, 16)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
    if mask.min() == mask.max():
        mask[0, 0] = 1 - mask[0, 0]
    auc = roc_auc(pred, mask)
    assert abs(auc - oracles.auc_threshold_sweep(pred, mask)) <= 1e-9
    assert abs(auc - oracles.auc_pairs(pred, mask)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_auc_monotone_invariance_and_complement(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random((16, 16))
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    mask[0, 0], mask[0, 1] = 0, 1
    auc = roc_auc(pred, mask)
    assert abs(roc_auc(pred ** 3, mask) - auc) <= 1e-12
    assert abs(roc_auc(1 / (1 + np.exp(-(4 * pred - 2))), mask) - auc) <= 1e-12
    assert roc_auc(pred, mask) + roc_auc(1 - pred, mask) == 1.0


# ------------------------------------------------------------------ evaluate

def test_mask_stub_scores_perfectly():
    rng = np.random.default_rng(1)
    report = evaluate(MaskStub(), [_mask_image_sample(rng, sid=f"m{i}") for i in range(5)], dataset="stub")
    assert report.mean_auc == 1.0 and report.n_images == 5
    assert report.metadata["reference_point"] == REFERENCE_POINT
    assert REFERENCE_POINT == {"config": "MS RGB+SB", "dataset": "CASIA", "auc": 0.898}


def test_single_class_images_are_skipped_and_reported(tmp_path):
    rng = np.random.default_rng(2)
    ok = _mask_image_sample(rng, sid="ok")
    empty = Sample("empty", rng.integers(0, 256, (64, 64, 3)).astype(np.uint8), np.zeros((64, 64), np.uint8))
    report = evaluate(MaskStub(), [ok, empty])
    assert report.image_ids == ["ok"] and report.skipped == [("empty", "undefined AUC: single-class mask")]
    jpath, cpath = report.save(tmp_path)
    d = json.loads(jpath.read_text())
    assert d["mean_auc"] == 1.0 and d["skipped"][0]["id"] == "empty"
    rows = list(csv.DictReader(cpath.open()))
    assert [r["status"] for r in rows] == ["ok", "skipped: undefined AUC: single-class mask"]


def test_unavailable_signal_is_skipped():
    small = Sample("small", np.zeros((64, 64, 3), np.uint8), np.eye(64, dtype=np.uint8))
    report = evaluate(MaskStub(signals=("SB",)), [small])
    assert report.n_images == 0 and report.skipped[0][0] == "small"
    assert report.skipped[0][1].startswith("signal unavailable")
    assert math.isnan(report.mean_auc) and report.to_dict()["mean_auc"] is None


def test_untrained_model_is_near_chance():
    rng = np.random.default_rng(3)
    data = [_balanced_random_sample(rng, sid=f"r{i}") for i in range(24)]
    cfg = ModelConfig(signals=(), input_size=64, encoder_channels=(8, 16, 16, 16, 16), seed=0)
    net = Network(cfg)
    calibrate_batchnorm(net, prepare_samples(data, cfg), batch_size=8)
    report = evaluate(net, data)
    assert report.n_images >= 20
    assert 0.4 <= report.mean_auc <= 0.6


def test_evaluate_is_read_only(tmp_path):
    cfg = tiny_config(signals=("DCT",))
    net = Network(cfg)
    data = generate_splices(3, 128, seed=5)
    calibrate_batchnorm(net, prepare_samples(data, cfg), batch_size=3)
    path = save_checkpoint(net, tmp_path / "m.msfn")
    raw = path.read_bytes()
    before = {k: v.copy() for k, v in net.store.state_arrays().items()}
    a = evaluate(path, data)
    b = evaluate(net, data)
    assert path.read_bytes() == raw
    assert all(np.array_equal(before[k], v) for k, v in net.store.state_arrays().items())
    assert a.aucs == b.aucs


def test_evaluate_rejects_unknown_model_type():
    with pytest.raises(TypeError):
        evaluate(object(), [])


# ------------------------------------------------------------------ heatmaps

def test_heatmap_codec_and_composite_layout(tmp_path):
    rng = np.random.default_rng(4)
    samples = [_mask_image_sample(rng, sid=f"h{i}") for i in range(2)]
    written = export_heatmaps(MaskStub(), samples, tmp_path)
    assert len(written) == 4
    for s in samples:
        with Image.open(tmp_path / f"{s.id}_heatmap.png") as im:
            heat = np.array(im)
        assert heat.dtype == np.uint8 and np.array_equal(heat, s.mask * 255)
        with Image.open(tmp_path / f"{s.id}_composite.png") as im:
            assert im.size == (3 * 64, 64)

    p = rng.random((32, 32))
    assert np.max(np.abs(to_uint8(p) / 255.0 - p)) <= 1 / 255
    item = {"image": rng.random((3, 32, 32)), "DCT": rng.random((1, 32, 32)), "SB": rng.random((1, 32, 32)),
            "mask": np.zeros((1, 32, 32))}
    assert composite(item, p, ("DCT", "SB")).shape == (32, (3 + 2) * 32, 3)


def test_heatmap_export_to_unwritable_dir_fails(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export_heatmaps(MaskStub(), [], blocker / "sub")


def test_predict_sample_shapes():
    rng = np.random.default_rng(5)
    item, prob = predict_sample(MaskStub(), _mask_image_sample(rng))
    assert prob.shape == (64, 64) and item["mask"].shape == (1, 64, 64)


# ------------------------------------------------------------------ ablation harness

def test_signal_set_parsing():
    assert parse_signal_set("RGB+SB") == ("SB",)
    assert parse_signal_set(["DCT", "SB"]) == ("DCT", "SB")
    assert parse_signal_set("RGB") == ()
    with pytest.raises(ValueError):
        parse_signal_set("RGB+ELA")
    with pytest.raises(ValueError):
        AblationGrid(fusion=())
    with pytest.raises(ValueError):
        AblationGrid.from_dict({"signal": ["SB"]})


def test_grid_models():
    g = AblationGrid(signals=("RGB+SB",), fusion=("MS", "MC"), skip=("No", "Img", "All"))
    models = g.models(ModelConfig())
    assert len(models) == 6 and {m.skip for m in models} == {"none", "image", "all"}


@pytest.fixture(scope="module")
def tiny_splits():
    return DatasetSplits("synthA", generate_splices(6, 128, seed=31), generate_splices(3, 128, seed=32))


@pytest.fixture(scope="module")
def sig_cache(tmp_path_factory):
    return SignalCache(tmp_path_factory.mktemp("cache"))


def test_ablation_fusion_rows_and_csv(tmp_path, tiny_splits, sig_cache):
    template = TrainConfig(model=tiny_config(), epochs=1, batch_size=4, lr=1e-3)
    grid = AblationGrid(signals=("RGB+SB",), fusion=("MS", "MC"))
    table = run_ablation(grid, template, tiny_splits, out_dir=tmp_path, cache=sig_cache)
    assert [(r.signals, r.fusion) for r in table.rows] == [("RGB+SB", "MS"), ("RGB+SB", "MC")]
    assert not table.failures
    rows = list(csv.reader((tmp_path / "ablation.csv").open()))
    assert rows[0] == CSV_HEADER and len(rows) == 3
    assert all(0.0 <= float(r[5]) <= 1.0 for r in rows[1:])


def test_ablation_skip_rows_and_ft_rows(tmp_path, tiny_splits, sig_cache):
    template = TrainConfig(model=tiny_config(), epochs=1, batch_size=4, lr=1e-3)
    grid = AblationGrid(signals=("RGB+SB",), fusion=("MS",), skip=("none", "image", "all"), ft=(False, True))
    table = run_ablation(grid, template, tiny_splits, datasets={"synthA": tiny_splits}, out_dir=tmp_path,
                         cache=sig_cache, ft_epochs=1)
    labels = [r.csv_row()[2:4] for r in table.rows]
    assert labels == [["No", "off"], ["No", "on"], ["Img", "off"], ["Img", "on"], ["All", "off"], ["All", "on"]]
    assert not table.failures
    for skip in ("none", "image", "all"):
        assert (tmp_path / "cells" / f"MS_RGB+SB_{skip}" / "ft_synthA" / "best.msfn").is_file()


def test_ablation_records_failed_cells_and_continues(tmp_path, tiny_splits, sig_cache):
    template = TrainConfig(model=tiny_config(), epochs=1, batch_size=4, lr=1e-3)
    tiny = DatasetSplits("tooSmall", [Sample("x", np.zeros((64, 64, 3), np.uint8), np.eye(64, dtype=np.uint8))],
                         tiny_splits.test)
    grid = AblationGrid(signals=("RGB+SB", "RGB"), fusion=("MS",))
    table = run_ablation(grid, template, tiny, out_dir=tmp_path, cache=sig_cache)
    assert len(table.rows) == 2 and len(table.failures) >= 1
    assert (tmp_path / "ablation_failures.json").is_file()
    assert (tmp_path / "ablation.csv").is_file()
