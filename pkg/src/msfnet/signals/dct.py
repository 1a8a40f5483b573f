"""JPEG double-quantization map from 8x8 block DCT coefficient histograms.

For each analysed AC position the final quantization step is taken as the
integer lattice that holds the coefficients most tightly. A reference
histogram computed off the JPEG grid (luma shifted by 4 pixels) approximates
the unquantized coefficient distribution; from it the expected index
histograms of single and of double quantization (every candidate first step)
are predicted. An EM fit of the observed index histogram as a mixture of the
two picks the first step and the mixing weight, and each block is scored by
the posterior of the minority component, which is the likely splice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .common import SignalError, SignalMap, minmax_normalize, rgb_to_luma

BLOCK = 8
HIST_LO, HIST_HI = -60, 60
NO_SIGNAL_STRENGTH = 0.1
PSEUDO_COUNT = 0.5
MIN_LATTICE = 0.25
MIN_LR_STATISTIC = 20.0
MIN_NONZERO = 50

# zig-zag order of the first AC positions (row, col)
ZIGZAG_AC = ((0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1), (3, 0))


@dataclass(frozen=True)
class DctParams:
    coefficients: tuple[tuple[int, int], ...] = ZIGZAG_AC
    hist_range: tuple[int, int] = (HIST_LO, HIST_HI)
    periods: tuple[int, int] = (2, 16)
    block: int = field(default=BLOCK)

    def __post_init__(self):
        if self.block != BLOCK:
            raise ValueError("block size is fixed at 8")
        object.__setattr__(self, "coefficients", tuple(tuple(c) for c in self.coefficients))
        object.__setattr__(self, "hist_range", tuple(self.hist_range))
        object.__setattr__(self, "periods", tuple(self.periods))

    def to_dict(self) -> dict:
        return {"block": self.block, "coefficients": [list(c) for c in self.coefficients],
                "hist_range": list(self.hist_range), "periods": list(self.periods)}


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are frequencies."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos((2 * i + 1) * k * np.pi / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


_D = dct_matrix()


def block_dct8(luma: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT of every 8x8 block of ``luma - 128``.

    Returns an array of shape (blocks_y, blocks_x, 8, 8).
    """
    L = np.asarray(luma, dtype=np.float64)
    h, w = L.shape
    if h % BLOCK or w % BLOCK:
        raise SignalError(f"luma size {h}x{w} is not a multiple of {BLOCK}; pad first")
    blocks = (L - 128.0).reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)
    return _D @ blocks @ _D.T


def block_idct8(coeffs: np.ndarray) -> np.ndarray:
    by, bx = coeffs.shape[:2]
    blocks = _D.T @ coeffs @ _D
    return blocks.transpose(0, 2, 1, 3).reshape(by * BLOCK, bx * BLOCK) + 128.0


def value_histogram(values: np.ndarray, lo: int = HIST_LO, hi: int = HIST_HI) -> np.ndarray:
    """Unit-width integer histogram over [lo, hi]; out-of-range values are dropped."""
    v = np.rint(np.asarray(values, dtype=np.float64)).astype(np.int64).ravel()
    v = v[(v >= lo) & (v <= hi)]
    return np.bincount(v - lo, minlength=hi - lo + 1)


def _local_mean(h: np.ndarray, p: int) -> np.ndarray:
    """Centred moving average over p bins (half weight at both ends when p is even)."""
    if p % 2:
        kernel = np.ones(p)
    else:
        kernel = np.ones(p + 1)
        kernel[0] = kernel[-1] = 0.5
    return np.convolve(h, kernel / p, mode="same")


def _phase_profile(hist: np.ndarray, p: int, lo: int):
    """Observed and locally expected counts per phase (|value| mod p), zero bin excluded.

    Quantization combs are symmetric in value, so negative values are folded
    onto their magnitudes. For the local expectation the zero bin is replaced
    by the mean of its neighbours, which keeps the peak from dragging the
    smallest magnitudes' expectation down.
    """
    h = np.asarray(hist, dtype=np.float64).copy()
    zero = -lo
    filled = h.copy()
    if 0 <= zero < len(h):
        h[zero] = 0.0
        nb = [h[i] for i in (zero - 1, zero + 1) if 0 <= i < len(h)]
        filled[zero] = np.mean(nb) if nb else 0.0
    expected = _local_mean(filled, p)
    values = np.arange(len(h)) + lo
    keep = values != 0
    phase = np.mod(np.abs(values[keep]), p)
    obs = np.bincount(phase, weights=h[keep], minlength=p)
    exp = np.bincount(phase, weights=expected[keep], minlength=p)
    return obs, exp


def _strength(hist: np.ndarray, p: int, lo: int) -> float:
    """Periodicity strength of ``hist`` at period p, in [0, 1].

    Phases holding more than their share under a locally uniform phase
    distribution form the comb; their surplus share is divided by the largest
    attainable surplus, so mass only at multiples of p scores 1 and an
    aperiodic histogram scores near 0.
    """
    obs, exp = _phase_profile(hist, p, lo)
    if obs.sum() <= 0 or exp.sum() <= 0:
        return 0.0
    o, e = obs / obs.sum(), exp / exp.sum()
    excess = float(np.clip(o - e, 0.0, None).sum())
    return float(np.clip(excess / max(1.0 - e.min(), 1e-12), 0.0, 1.0))


def dq_period_estimate(hist: np.ndarray, lo: int = HIST_LO, periods=(2, 16)) -> tuple[int, float]:
    """Most periodic candidate p and its strength in [0, 1].

    Zero is left out (it collects everything below half a step under any
    quantization). Ties go to the smaller, fundamental period.
    """
    hist = np.asarray(hist)
    if hist.sum() - (hist[-lo] if 0 <= -lo < len(hist) else 0) <= 0:
        return 0, 0.0
    best_p, best_s = 0, 0.0
    for p in range(periods[0], periods[1] + 1):
        s = _strength(hist, p, lo)
        if s > best_s + 1e-12:
            best_p, best_s = p, s
    return best_p, best_s


def lattice_concentration(values: np.ndarray, q: int, tol: float = 0.5) -> float:
    """How tightly non-zero values sit on multiples of q, in [0, 1] (0 = uniform residuals)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.abs(v) >= q / 2.0]
    if v.size == 0:
        return 0.0
    near = float((np.abs(v - q * np.rint(v / q)) <= tol).mean())
    chance = min(2.0 * tol / q, 1.0)
    return max(0.0, (near - chance) / max(1.0 - chance, 1e-12))


def final_step(values: np.ndarray, params: DctParams = DctParams()) -> int:
    """Step of the last quantization: the candidate lattice holding the values most tightly.

    Returns 1 when no candidate reaches MIN_LATTICE.
    """
    best_q, best_c = 1, MIN_LATTICE
    for q in range(params.periods[0], params.periods[1] + 1):
        c = lattice_concentration(values, q)
        if c > best_c:
            best_q, best_c = q, c
    return best_q


def _index_pmf(idx: np.ndarray, lo: int, hi: int) -> np.ndarray:
    h = value_histogram(idx, lo, hi).astype(np.float64) + PSEUDO_COUNT
    return h / h.sum()


def fit_mixture(hist: np.ndarray, p_single: np.ndarray, p_double: np.ndarray,
                iters: int = 50) -> tuple[float, float]:
    """EM for the weight of ``p_double`` in a two-component histogram mixture.

    Returns (weight, log-likelihood gain over the single-component model).
    """
    h = np.asarray(hist, dtype=np.float64)
    n = h.sum()
    if n <= 0:
        return 0.0, 0.0
    a = 0.5
    for _ in range(iters):
        mix = (1 - a) * p_single + a * p_double
        a = float((h * a * p_double / mix).sum() / n)
    mix = (1 - a) * p_single + a * p_double
    gain = float((h * (np.log(mix) - np.log(p_single))).sum())
    return a, gain


def _coefficient_scores(values: np.ndarray, reference: np.ndarray, params: DctParams):
    """Per-block suspicion for one coefficient position (NaN out of range), or None.

    ``reference`` holds the same coefficient taken off the JPEG grid, which
    approximates content that was never quantized. Quantizing it once with
    the final step models single compression; quantizing it with a candidate
    primary step first models double compression.
    """
    lo, hi = params.hist_range
    q2 = final_step(values, params)
    if q2 < 2:
        return None
    idx = np.rint(values / q2).astype(np.int64)
    hist = value_histogram(idx, lo, hi)
    if hist.sum() - hist[-lo] < MIN_NONZERO:
        return None
    p_single = _index_pmf(np.rint(reference / q2), lo, hi)
    best = None
    for q1 in range(params.periods[0], params.periods[1] + 1):
        if q1 == q2:
            continue
        p_double = _index_pmf(np.rint(np.rint(reference / q1) * q1 / q2), lo, hi)
        a, gain = fit_mixture(hist, p_single, p_double)
        if best is None or gain > best[2]:
            best = (q1, a, gain, p_double)
    q1, a, gain, p_double = best
    if 2.0 * gain < MIN_LR_STATISTIC or not 0.0 < a < 1.0:
        return None
    post = a * p_double / ((1 - a) * p_single + a * p_double)
    table = post if a < 0.5 else 1.0 - post
    inside = (idx >= lo) & (idx <= hi)
    scores = np.full(idx.shape, np.nan)
    scores[inside] = table[idx[inside] - lo]
    return scores


def _pad_to_blocks(luma: np.ndarray) -> np.ndarray:
    h, w = luma.shape
    ph, pw = (-h) % BLOCK, (-w) % BLOCK
    return np.pad(luma, ((0, ph), (0, pw)), mode="edge") if (ph or pw) else luma


def dct_block_scores(image: np.ndarray, params: DctParams = DctParams()) -> np.ndarray:
    """Raw per-block suspicion (blocks_y, blocks_x); all zeros when no comb is found."""
    luma = rgb_to_luma(image)
    h, w = luma.shape
    if h < 32 or w < 32:
        raise SignalError("image too small for block analysis")
    luma = _pad_to_blocks(luma)
    coeffs = block_dct8(luma)
    off = BLOCK // 2
    reference = block_dct8(luma[off:off + luma.shape[0] - BLOCK, off:off + luma.shape[1] - BLOCK])
    per_coef = []
    for (u, v) in params.coefficients:
        s = _coefficient_scores(coeffs[:, :, u, v], reference[:, :, u, v], params)
        if s is not None:
            per_coef.append(s)
    if not per_coef:
        return np.zeros(coeffs.shape[:2])
    stack = np.stack(per_coef)
    valid = ~np.isnan(stack)
    counts = valid.sum(axis=0)
    sums = np.where(valid, stack, 0.0).sum(axis=0)
    block = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    if counts.any():
        block[counts == 0] = block[counts > 0].mean()
    return block


def dct_dq_map(image: np.ndarray, params: DctParams = DctParams()) -> SignalMap:
    h, w = np.asarray(image).shape[:2]
    block = minmax_normalize(dct_block_scores(image, params))
    full = np.repeat(np.repeat(block, BLOCK, axis=0), BLOCK, axis=1)[:h, :w]
    return SignalMap(full, "DCT", (h, w))
