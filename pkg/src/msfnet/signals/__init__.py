"""Handcrafted forensic signal maps: DCT double quantization and Splicebuster."""

from .common import SignalError, SignalMap, minmax_normalize, rgb_to_luma
from .dct import DctParams, block_dct8, block_idct8, dct_block_scores, dct_dq_map, dq_period_estimate
from .splicebuster import (
    SbParams,
    cooccur_features,
    highpass_residual,
    quantize_truncate,
    splicebuster_map,
    splicebuster_scores,
)

SIGNAL_KINDS = ("DCT", "SB")


def default_params(kind: str):
    if kind == "DCT":
        return DctParams()
    if kind == "SB":
        return SbParams()
    raise SignalError(f"unknown signal kind {kind!r}")


def extract(image, kind: str, params=None) -> SignalMap:
    """Run the extractor for ``kind`` ("DCT" or "SB") on an RGB array."""
    params = params if params is not None else default_params(kind)
    if kind == "DCT":
        return dct_dq_map(image, params)
    if kind == "SB":
        return splicebuster_map(image, params)
    raise SignalError(f"unknown signal kind {kind!r}")


__all__ = [
    "DctParams", "SIGNAL_KINDS", "SbParams", "SignalError", "SignalMap", "block_dct8", "block_idct8",
    "cooccur_features", "dct_block_scores", "dct_dq_map", "default_params", "dq_period_estimate", "extract",
    "highpass_residual", "minmax_normalize", "quantize_truncate", "rgb_to_luma", "splicebuster_map",
    "splicebuster_scores",
]
