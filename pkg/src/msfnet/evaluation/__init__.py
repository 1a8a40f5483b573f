"""Pixel AUC, dataset evaluation, ablation grids and heatmap export."""

from .ablation import (
    CSV_HEADER,
    AblationGrid,
    AblationRow,
    AblationTable,
    DatasetSplits,
    parse_signal_set,
    run_ablation,
    signal_label,
)
from .evaluate import (PROTOCOL, REFERENCE_POINT, EvalReport, as_model, composite, evaluate, export_heatmaps,
                       predict_sample, to_uint8)
from .metrics import roc_auc

__all__ = [
    "AblationGrid", "AblationRow", "AblationTable", "CSV_HEADER", "DatasetSplits", "EvalReport", "PROTOCOL",
    "REFERENCE_POINT", "as_model", "composite", "evaluate", "export_heatmaps", "parse_signal_set", "predict_sample",
    "roc_auc", "run_ablation", "signal_label", "to_uint8",
]
