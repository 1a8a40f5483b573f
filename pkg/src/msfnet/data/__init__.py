"""Samples, manifests, input preparation, the splice generator and the signal cache."""

from .cache import SignalCache, image_hash, params_hash
from .manifest import (
    DatasetManifest,
    ManifestEntry,
    ManifestError,
    iterate_samples,
    load_entry,
    load_manifest,
    write_samples,
)
from .prepare import attach_signals, prepare_input, resize_image, resize_map, resize_mask, stack_batch
from .sample import MASK_THRESHOLD, SPLITS, Sample, SampleError, binarize_mask, load_mask, load_rgb
from .synth import (
    SpliceError,
    SpliceParams,
    generate_splices,
    jpeg_roundtrip,
    procedural_image,
    rasterize_region,
    splices_from_pools,
    synth_splice,
    texture_mismatch_splices,
)

__all__ = [
    "DatasetManifest", "MASK_THRESHOLD", "ManifestEntry", "ManifestError", "SPLITS", "Sample", "SampleError",
    "SignalCache", "SpliceError", "SpliceParams", "attach_signals", "binarize_mask", "generate_splices",
    "image_hash", "iterate_samples", "jpeg_roundtrip", "load_entry", "load_manifest", "load_mask", "load_rgb",
    "params_hash", "prepare_input", "procedural_image", "rasterize_region", "resize_image", "resize_map",
    "resize_mask", "splices_from_pools", "stack_batch", "synth_splice", "texture_mismatch_splices", "write_samples",
]
