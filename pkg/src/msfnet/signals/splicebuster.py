"""Noise-residual co-occurrence map (single-Gaussian Splicebuster variant).

Pipeline: third-order high-pass residuals along rows and columns, truncation
and uniform quantization, per-window histograms of k-long runs, and a
Mahalanobis anomaly score against one Gaussian fitted to all windows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .common import SignalError, SignalMap, bilinear_resize, minmax_normalize, rgb_to_luma

HIGHPASS = np.array([1.0, -3.0, 3.0, -1.0])
RIDGE = 1e-6
MIN_WINDOWS = 8


@dataclass(frozen=True)
class SbParams:
    q: int = 3
    T: float = 1.0
    k: int = 4
    W: int = 64
    s: int = 8

    def __post_init__(self):
        if self.q < 2:
            raise ValueError(f"quantization levels q must be >= 2, got {self.q}")
        if self.k < 2:
            raise ValueError(f"co-occurrence order k must be >= 2, got {self.k}")
        if self.T <= 0:
            raise ValueError("truncation threshold T must be positive")
        if self.s < 1 or self.W % self.s:
            raise ValueError(f"window size W={self.W} must be a multiple of stride s={self.s}")

    @property
    def dim(self) -> int:
        return self.q ** self.k

    def to_dict(self) -> dict:
        return asdict(self)


def highpass_residual(luma: np.ndarray, axis: int = 1) -> np.ndarray:
    """r[x] = L[x-1] - 3 L[x] + 3 L[x+1] - L[x+2] along ``axis`` (1 = horizontal).

    Borders use symmetric (edge-repeating) padding: one sample before, two after.
    """
    L = np.asarray(luma, dtype=np.float64)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 2)
    P = np.pad(L, pad, mode="symmetric")
    n = L.shape[axis]
    out = np.zeros_like(L)
    for j, coef in enumerate(HIGHPASS):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(j, j + n)
        out += coef * P[tuple(sl)]
    return out


def quantize_truncate(residual: np.ndarray, q: int = 3, T: float = 1.0) -> np.ndarray:
    """Clamp to [-T, T] and map uniformly onto levels 0..q-1 (round half up)."""
    if q < 2:
        raise ValueError("q must be >= 2")
    r = np.clip(np.asarray(residual, dtype=np.float64), -T, T)
    levels = np.floor((r + T) / (2 * T) * (q - 1) + 0.5)
    return np.clip(levels, 0, q - 1).astype(np.int64)


def _run_codes(qmap: np.ndarray, q: int, k: int, axis: int) -> np.ndarray:
    """Base-q code of every k-long run starting at each valid position along ``axis``."""
    n = qmap.shape[axis] - k + 1
    codes = np.zeros(
        (qmap.shape[0] - k + 1, qmap.shape[1]) if axis == 0 else (qmap.shape[0], qmap.shape[1] - k + 1),
        dtype=np.int64,
    )
    for j in range(k):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(j, j + n)
        codes = codes * q + qmap[tuple(sl)]
    return codes


def window_origins(h: int, w: int, W: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    if W > h or W > w:
        raise SignalError(f"window {W}x{W} larger than image {h}x{w}")
    return np.arange(0, h - W + 1, s), np.arange(0, w - W + 1, s)


def _window_sums(onehot_cum: np.ndarray, ys: np.ndarray, xs: np.ndarray, hh: int, ww: int) -> np.ndarray:
    """Box sums of an (H+1, W+1, D) integral image over hh x ww boxes at the given origins."""
    y0, x0 = ys[:, None], xs[None, :]
    return (onehot_cum[y0 + hh, x0 + ww] - onehot_cum[y0, x0 + ww]
            - onehot_cum[y0 + hh, x0] + onehot_cum[y0, x0])


def _integral_onehot(codes: np.ndarray, dim: int) -> np.ndarray:
    h, w = codes.shape
    cum = np.zeros((h + 1, w + 1, dim), dtype=np.int32)
    onehot = np.zeros((h, w, dim), dtype=np.int32)
    np.put_along_axis(onehot, codes[..., None], 1, axis=2)
    cum[1:, 1:] = onehot.cumsum(0).cumsum(1)
    return cum


def cooccur_features(qmap_h: np.ndarray, k: int = 4, W: int = 64, s: int = 8, q: int = 3,
                     qmap_v: np.ndarray | None = None) -> np.ndarray:
    """Normalized histograms of k-long horizontal and vertical runs per window.

    Horizontal runs come from ``qmap_h`` and vertical runs from ``qmap_v``
    (defaults to ``qmap_h``). A run is counted in a window when it lies
    entirely inside it. Returns (num_windows, q**k), windows in row-major grid
    order.
    """
    qh = np.asarray(qmap_h, dtype=np.int64)
    qv = qh if qmap_v is None else np.asarray(qmap_v, dtype=np.int64)
    if qh.shape != qv.shape:
        raise SignalError("horizontal and vertical quantized maps must have the same shape")
    h, w = qh.shape
    ys, xs = window_origins(h, w, W, s)
    dim = q ** k
    hist = _window_sums(_integral_onehot(_run_codes(qh, q, k, axis=1), dim), ys, xs, W, W - k + 1)
    hist = hist + _window_sums(_integral_onehot(_run_codes(qv, q, k, axis=0), dim), ys, xs, W - k + 1, W)
    hist = hist.reshape(len(ys) * len(xs), dim).astype(np.float64)
    return hist / hist.sum(axis=1, keepdims=True)


def mahalanobis_scores(features: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Distance of each row to a single Gaussian fitted to all rows."""
    X = np.asarray(features, dtype=np.float64)
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / max(len(X) - 1, 1) + ridge * np.eye(X.shape[1])
    sol = np.linalg.solve(cov, Xc.T).T
    d2 = np.einsum("ij,ij->i", Xc, sol)
    return np.sqrt(np.maximum(d2, 0.0))


def splicebuster_scores(image: np.ndarray, params: SbParams = SbParams()):
    """Pre-normalization window scores and their grid geometry.

    Returns (scores (ny, nx), window origins ys, xs).
    """
    luma = rgb_to_luma(image)
    h, w = luma.shape
    if h < params.W or w < params.W:
        raise SignalError("image too small for Splicebuster analysis")
    ys, xs = window_origins(h, w, params.W, params.s)
    if len(ys) * len(xs) < MIN_WINDOWS:
        raise SignalError("image too small for Splicebuster analysis")
    qh = quantize_truncate(highpass_residual(luma, axis=1), params.q, params.T)
    qv = quantize_truncate(highpass_residual(luma, axis=0), params.q, params.T)
    feats = cooccur_features(qh, params.k, params.W, params.s, params.q, qmap_v=qv)
    scores = mahalanobis_scores(np.sqrt(feats))
    return scores.reshape(len(ys), len(xs)), ys, xs


def splicebuster_map(image: np.ndarray, params: SbParams = SbParams()) -> SignalMap:
    scores, ys, xs = splicebuster_scores(image, params)
    h, w = np.asarray(image).shape[:2]
    half = (params.W - 1) / 2.0
    full = bilinear_resize(scores, ys + half, xs + half, h, w)
    return SignalMap(minmax_normalize(full), "SB", (h, w))
