"""Segmentation metrics and dataset evaluation."""

from ikd_mil.metrics.evaluation import (
    MetricsReport,
    PatchMetrics,
    evaluate_dataset,
    predict_fused,
    report_from_predictions,
    summary_table,
)
from ikd_mil.metrics.masks import binarize, boundary, f1_score, hausdorff_distance, iou_score

__all__ = [
    "MetricsReport",
    "PatchMetrics",
    "binarize",
    "boundary",
    "evaluate_dataset",
    "f1_score",
    "hausdorff_distance",
    "iou_score",
    "predict_fused",
    "report_from_predictions",
    "summary_table",
]
