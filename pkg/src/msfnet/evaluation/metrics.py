"""Pixel-level ROC-AUC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def roc_auc(pred: np.ndarray, mask: np.ndarray) -> float:
    """Area under the ROC curve of ``pred`` scores against a binary ``mask``.

    Uses the Mann-Whitney rank statistic with midranks for ties, which equals
    the trapezoidal area under the full threshold sweep. Returns NaN when the
    mask holds a single class.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    mask = np.asarray(mask).ravel()
    if pred.shape != mask.shape:
        raise ValueError(f"pred has {pred.size} values, mask has {mask.size}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary")
    if np.isnan(pred).any():
        raise ValueError("pred contains NaN")
    pos = mask == 1
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(pred, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))

