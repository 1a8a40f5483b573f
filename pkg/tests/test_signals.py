from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

import oracles
from msfnet.data import jpeg_roundtrip
from msfnet.signals import (
    DctParams,
    SbParams,
    SignalError,
    block_dct8,
    block_idct8,
    cooccur_features,
    dct_dq_map,
    dq_period_estimate,
    extract,
    highpass_residual,
    quantize_truncate,
    rgb_to_luma,
    splicebuster_map,
    splicebuster_scores,
)
from msfnet.signals.dct import NO_SIGNAL_STRENGTH, value_histogram

FLAT_SAMPLE_SIZE = 2000  # coefficients per histogram in the no-signal calibration


def jpeg_round(x):
    """Round half away from zero, as JPEG quantizers do."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


# ------------------------------------------------------------------ luma

def test_luma_reference_pixels():
    px = np.array([[[255, 255, 255], [255, 0, 0]]], dtype=np.uint8)
    y = rgb_to_luma(px)
    assert y[0, 0] == pytest.approx(255.0)
    assert y[0, 1] == pytest.approx(76.245)


def test_luma_matches_formula_exactly():
    img = np.random.default_rng(0).integers(0, 256, (9, 7, 3)).astype(np.uint8)
    np.testing.assert_array_equal(rgb_to_luma(img), oracles.luma_direct(img))


# ------------------------------------------------------------------ block DCT

def test_dct_constant_blocks():
    assert np.all(block_dct8(np.full((8, 8), 128.0)) == 0)
    c = block_dct8(np.full((8, 8), 136.0))[0, 0]
    assert c[0, 0] == pytest.approx(64.0)
    ac = c.copy()
    ac[0, 0] = 0
    assert np.max(np.abs(ac)) < 1e-12


def test_dct_matches_double_sum_and_round_trips():
    r = np.random.default_rng(1)
    luma = r.uniform(0, 255, (16, 24))
    coeffs = block_dct8(luma)
    assert coeffs.shape == (2, 3, 8, 8)
    np.testing.assert_allclose(coeffs[1, 2], oracles.dct8_double_sum(luma[8:16, 16:24]), atol=1e-9)
    assert np.max(np.abs(block_idct8(coeffs) - luma)) <= 1e-3


def test_dct_rejects_unpadded_input():
    with pytest.raises(SignalError):
        block_dct8(np.zeros((10, 16)))


# ------------------------------------------------------------------ period estimate

def test_period_of_constructed_comb():
    hist = np.zeros(121)
    hist[np.arange(-60, 61, 3) + 60] = 100
    p, s = dq_period_estimate(hist)
    assert p == 3 and s >= 0.9


def test_period_of_empty_histogram():
    assert dq_period_estimate(np.zeros(121)) == (0, 0.0)


def test_flat_histograms_stay_below_no_signal_threshold():
    assert dq_period_estimate(np.full(121, 40))[1] <= NO_SIGNAL_STRENGTH
    r = np.random.default_rng(2)
    strengths = [dq_period_estimate(r.multinomial(FLAT_SAMPLE_SIZE, np.ones(121) / 121))[1] for _ in range(200)]
    assert max(strengths) <= NO_SIGNAL_STRENGTH


def test_double_quantization_7_then_4_is_detected():
    r = np.random.default_rng(3)
    hits = 0
    for _ in range(100):
        x = r.laplace(0, r.uniform(20, 60), size=int(r.integers(1000, 5000)))
        idx = jpeg_round(jpeg_round(x / 7) * 7 / 4)
        p, s = dq_period_estimate(value_histogram(idx))
        hits += p == 7 and s > NO_SIGNAL_STRENGTH
    assert hits >= 90


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=121, max_size=121))
def test_period_strength_in_unit_interval(counts):
    p, s = dq_period_estimate(np.array(counts))
    assert 0.0 <= s <= 1.0
    assert p == 0 or 2 <= p <= 16


# ------------------------------------------------------------------ DCT map

def test_dct_map_too_small():
    with pytest.raises(SignalError, match="image too small for block analysis"):
        dct_dq_map(np.zeros((24, 40, 3), dtype=np.uint8))


def test_dct_map_constant_image_is_zero():
    m = dct_dq_map(np.full((64, 64, 3), 77, dtype=np.uint8))
    assert m.values.shape == (64, 64) and np.all(m.values == 0)


def test_dct_map_null_single_compression():
    r = np.random.default_rng(4)
    ok = 0
    for _ in range(50):
        img = jpeg_roundtrip(r.integers(0, 256, (256, 256, 3)).astype(np.uint8), 90)
        v = dct_dq_map(img).values
        labels, n = ndimage.label(v > 0.5)
        largest = np.bincount(labels.ravel())[1:].max() if n else 0
        ok += v.std() < 0.25 and largest <= 0.05 * v.size
    assert ok >= 40


# ------------------------------------------------------------------ residuals and co-occurrences

def test_highpass_constant_and_ramp():
    assert np.all(highpass_residual(np.full((6, 9), 42.0)) == 0)
    ramp = np.tile(np.arange(12, dtype=np.float64) * 3.5, (4, 1))
    assert np.all(highpass_residual(ramp, axis=1)[:, 1:-2] == 0)
    assert np.all(highpass_residual(ramp.T, axis=0)[1:-2, :] == 0)


@pytest.mark.parametrize("axis", [0, 1])
def test_highpass_matches_sliding_dot_product(axis):
    L = np.random.default_rng(5).uniform(0, 255, (7, 11))
    np.testing.assert_array_equal(highpass_residual(L, axis=axis), oracles.highpass_direct(L, axis))


def test_quantize_examples():
    assert quantize_truncate(np.array([0.0]), 3, 1.0)[0] == 1
    assert quantize_truncate(np.array([10.0]), 3, 1.0)[0] == 2
    assert quantize_truncate(np.array([-10.0]), 3, 1.0)[0] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(0.25, 4.0), st.integers(0, 2**31 - 1))
def test_quantize_matches_nearest_level(q, T, seed):
    r = np.random.default_rng(seed).normal(0, 2 * T, size=50)
    np.testing.assert_array_equal(quantize_truncate(r, q, T), oracles.quantize_direct(r, q, T))


def test_cooccurrence_constant_map_and_dimension():
    f = cooccur_features(np.ones((16, 16), dtype=np.int64), k=4, W=8, s=4, q=3)
    assert f.shape == (9, 81)
    middle = 1 * 27 + 1 * 9 + 1 * 3 + 1
    assert np.all(f[:, middle] == 1.0)


def test_cooccurrence_matches_brute_force():
    r = np.random.default_rng(6)
    qh, qv = r.integers(0, 3, (20, 24)), r.integers(0, 3, (20, 24))
    np.testing.assert_allclose(cooccur_features(qh, 4, 12, 4, 3, qmap_v=qv),
                               oracles.cooccur_brute(qh, qv, 4, 12, 4, 3), atol=0)


def test_cooccurrence_window_larger_than_image():
    with pytest.raises(SignalError):
        cooccur_features(np.zeros((8, 8), dtype=np.int64), k=4, W=16, s=8)


# ------------------------------------------------------------------ Splicebuster

def test_sb_too_small():
    with pytest.raises(SignalError, match="image too small for Splicebuster analysis"):
        splicebuster_map(np.zeros((64, 64, 3), dtype=np.uint8))


def test_sb_constant_image_is_zero():
    m = splicebuster_map(np.full((96, 96, 3), 200, dtype=np.uint8))
    assert np.all(m.values == 0)


def test_sb_null_scores_are_near_flat():
    r = np.random.default_rng(7)
    ok = 0
    for _ in range(30):
        sc, _, _ = splicebuster_scores(r.integers(0, 256, (256, 256, 3)).astype(np.uint8))
        sc = sc.ravel()
        mad = np.median(np.abs(sc - np.median(sc)))
        ok += np.percentile(sc, 95) - np.percentile(sc, 5) < 3 * mad
    assert ok >= 24


def test_sb_params_invariants():
    assert SbParams().dim == 81
    for bad in ({"q": 1}, {"k": 1}, {"W": 60, "s": 8}):
        with pytest.raises(ValueError):
            SbParams(**bad)


# ------------------------------------------------------------------ shared map invariants

@settings(max_examples=8, deadline=None)
@given(st.sampled_from(["DCT", "SB"]), st.integers(0, 2**31 - 1), st.sampled_from([(96, 96), (104, 128)]))
def test_maps_are_deterministic_in_range_and_image_sized(kind, seed, shape):
    img = np.random.default_rng(seed).integers(0, 256, shape + (3,)).astype(np.uint8)
    a, b = extract(img, kind), extract(img.copy(), kind)
    assert a.values.shape == shape and a.kind == kind
    assert a.values.min() >= 0.0 and a.values.max() <= 1.0
    assert np.array_equal(a.values, b.values)


def test_dct_params_fix_block_size():
    with pytest.raises(ValueError):
        DctParams(block=16)
    assert len(DctParams().coefficients) == 9
