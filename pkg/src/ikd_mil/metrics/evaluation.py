"""
Dataset-level evaluation of fused predictions.

:hierarchy: [Metrics | Evaluation]
:relates-to:
 - motivated_by: "Results are the per-patch average of F1, IoU and HD on positives"
 - implements: "class: 'PatchMetrics', 'MetricsReport'; functions: predict_fused, evaluate_dataset"
 - uses: ["library: 'pandas'", "library: 'torch'"]

:contract:
 - pre: "dataset exposes masks through evaluation_items()"
 - post: "means over defined values; HD^Pos over positive-GT patches only"
 - invariant: "aggregation order == dataset order"

:complexity: 5
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch

from ikd_mil.core.config import MetricsConfig
from ikd_mil.data.batching import make_loader
from ikd_mil.data.patches import PatchDataset
from ikd_mil.metrics.masks import binarize, f1_score, hausdorff_distance, iou_score
from ikd_mil.utils.formatting import NumpyEncoder, format_mean_std
from ikd_mil.utils.logger import get_logger

METRICS_COLUMNS = ["source_id", "label", "f1", "iou", "hd"]


@dataclass
class PatchMetrics:
    source_id: str
    label: int
    f1: float
    iou: float
    hd: Optional[float]


def _mean_std(values: Sequence[float]) -> tuple:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class MetricsReport:
    """
    Per-patch metrics with dataset means and population standard deviations.

    :hierarchy: [Metrics | Evaluation | MetricsReport]
    :contract:
     - invariant: "mean_hd_pos is None when no patch has foreground"
    """

    per_patch: List[PatchMetrics]
    threshold: float = 0.5
    excluded: int = 0
    mean_f1: Optional[float] = field(init=False, default=None)
    std_f1: Optional[float] = field(init=False, default=None)
    mean_iou: Optional[float] = field(init=False, default=None)
    std_iou: Optional[float] = field(init=False, default=None)
    mean_hd_pos: Optional[float] = field(init=False, default=None)
    std_hd_pos: Optional[float] = field(init=False, default=None)

    def __post_init__(self) -> None:
        self.mean_f1, self.std_f1 = _mean_std([p.f1 for p in self.per_patch])
        self.mean_iou, self.std_iou = _mean_std([p.iou for p in self.per_patch])
        hds = [p.hd for p in self.per_patch if p.label == 1 and p.hd is not None]
        self.mean_hd_pos, self.std_hd_pos = _mean_std(hds)

    @property
    def total(self) -> int:
        return len(self.per_patch)

    @property
    def positive(self) -> int:
        return sum(1 for p in self.per_patch if p.label == 1)

    def to_frame(self) -> pd.DataFrame:
        """Per-patch rows followed by ``__mean__`` and ``__std__`` summary rows."""
        rows = [asdict(p) for p in self.per_patch]
        for name, f1, iou, hd in (
            ("__mean__", self.mean_f1, self.mean_iou, self.mean_hd_pos),
            ("__std__", self.std_f1, self.std_iou, self.std_hd_pos),
        ):
            rows.append({"source_id": name, "label": None, "f1": f1, "iou": iou, "hd": hd})
        frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
        frame["label"] = frame["label"].astype("Int64")
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    def summary_dict(self) -> Dict[str, Any]:
        return {
            "threshold": self.threshold,
            "total": self.total,
            "positive": self.positive,
            "excluded": self.excluded,
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
            "mean_iou": self.mean_iou,
            "std_iou": self.std_iou,
            "mean_hd_pos": self.mean_hd_pos,
            "std_hd_pos": self.std_hd_pos,
        }

    def summary_text(self, title: str = "") -> str:
        """Compact ``F1 / IOU / HD^Pos`` table (F1 and IoU in percent)."""
        footer = f"patches={self.total} positive={self.positive} excluded={self.excluded} threshold={self.threshold}"
        return summary_table({title or "model": self}) + "\n" + footer

    def write(self, directory: Union[str, Path], stem: str = "metrics", title: str = "") -> None:
        directory = Path(directory)
        self.to_csv(directory / f"{stem}.csv")
        (directory / f"{stem}_summary.txt").write_text(self.summary_text(title) + "\n", encoding="utf-8")
        (directory / f"{stem}_summary.json").write_text(
            json.dumps(self.summary_dict(), indent=2, cls=NumpyEncoder), encoding="utf-8"
        )


@torch.no_grad()
def predict_fused(model: torch.nn.Module, data: PatchDataset, batch_size: int = 32) -> np.ndarray:
    """
    Fused probability maps for every patch, (N, H, W) float32, in dataset order.

    :hierarchy: [Metrics | Evaluation | PredictFused]
    """
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    outputs = []
    try:
        for batch in make_loader(data, batch_size, shuffle=False):
            outputs.append(model(batch.pixels.to(device)).fused.to("cpu").numpy())
    finally:
        model.train(was_training)
    if not outputs:
        return np.zeros((0, 0, 0), dtype=np.float32)
    return np.concatenate(outputs).astype(np.float32)


def report_from_predictions(
    predictions: np.ndarray, data: PatchDataset, cfg: Optional[MetricsConfig] = None, threshold: Optional[float] = None
) -> MetricsReport:
    """
    Score precomputed fused maps against the dataset masks.

    Patches without masks are excluded with a warning and counted.
    """
    logger = get_logger(__name__, evaluate_dataset)
    cfg = cfg or MetricsConfig()
    threshold = cfg.threshold if threshold is None else threshold
    rows: List[PatchMetrics] = []
    excluded = 0
    for patch, prob in zip(data.evaluation_items(), predictions):
        if patch.gt_mask is None:
            excluded += 1
            logger.warning(f"[Evaluate|Skip] {patch.source_id} has no ground-truth mask")
            continue
        pred = binarize(prob, threshold)
        rows.append(
            PatchMetrics(
                source_id=patch.source_id,
                label=patch.label,
                f1=f1_score(pred, patch.gt_mask, cfg.empty_score),
                iou=iou_score(pred, patch.gt_mask, cfg.empty_score),
                hd=hausdorff_distance(pred, patch.gt_mask, cfg.empty_prediction_hd),
            )
        )
    return MetricsReport(per_patch=rows, threshold=threshold, excluded=excluded)


def evaluate_dataset(
    model: torch.nn.Module,
    data: PatchDataset,
    threshold: Optional[float] = None,
    cfg: Optional[MetricsConfig] = None,
    batch_size: int = 32,
) -> MetricsReport:
    """
    Per-patch metrics of binarized fused outputs, aggregated over the dataset.

    :hierarchy: [Metrics | Evaluation | EvaluateDataset]
    :contract:
     - pre: "model input size == dataset image size"
     - post: "oracle model -> mean F1 = IoU = 1, HD^Pos = 0"

    Args:
        model: Segmentation model (run in eval mode, mode restored afterwards)
        data: Dataset with evaluation masks
        threshold: Binarization threshold; defaults to cfg.threshold
        cfg: Metric conventions
        batch_size: Inference batch size
    """
    predictions = predict_fused(model, data, batch_size)
    report = report_from_predictions(predictions, data, cfg, threshold)
    get_logger(__name__, evaluate_dataset).debug(
        f"Evaluated {data.name or data.role} | f1={_fmt(report.mean_f1)} | "
        f"iou={_fmt(report.mean_iou)} | hd_pos={_fmt(report.mean_hd_pos)}"
    )
    return report


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None or math.isnan(value) else f"{value:.4f}"


def summary_table(reports: Dict[str, MetricsReport]) -> str:
    """``F1 / IOU / HD^Pos`` rows, one per named report."""
    lines = [f"{'':<20}{'F1':>12}{'IOU':>12}{'HD^Pos':>12}"]
    for name, report in reports.items():
        lines.append(
            f"{name:<20}"
            f"{format_mean_std(report.mean_f1, report.std_f1, percent=True):>12}"
            f"{format_mean_std(report.mean_iou, report.std_iou, percent=True):>12}"
            f"{format_mean_std(report.mean_hd_pos, report.std_hd_pos):>12}"
        )
    return "\n".join(lines)
