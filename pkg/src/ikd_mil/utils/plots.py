"""
Plot functions for training curves and ablation summaries.

:hierarchy: [Utils | Plots]
:relates-to:
 - motivated_by: "Compare arms by best-per-period validation F1 with error bars"
 - implements: "functions: aggregate_period_curves, plot_period_curves,
                plot_sweep, export_figure"

:contract:
 - pre: "History frames follow the history.csv schema"
 - post: "Returns go.Figure; export always writes HTML"

:complexity: 3
:decision_cache: "Static files only; PNG when kaleido is installed"
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from ikd_mil.training.history import best_per_period
from ikd_mil.utils.logger import get_logger

ARM_COLORS = ["#3498db", "#e74c3c", "#2ecc71", "#9b59b6", "#f39c12", "#1abc9c"]


def aggregate_period_curves(
    frames: Sequence[pd.DataFrame], period: int, metric: str = "val_f1", stage: str = "distill"
) -> pd.DataFrame:
    """
    Mean and std across repeats of the best-per-period curve.

    Returns:
        Frame with columns ``epoch, mean, std, n``
    """
    curves = [best_per_period(f, period, stage=stage, metric=metric).set_index("epoch")[metric] for f in frames]
    curves = [c for c in curves if not c.empty]
    if not curves:
        return pd.DataFrame(columns=["epoch", "mean", "std", "n"])
    table = pd.concat(curves, axis=1)
    out = pd.DataFrame(
        {
            "mean": table.mean(axis=1),
            "std": table.std(axis=1, ddof=0).fillna(0.0),
            "n": table.notna().sum(axis=1),
        }
    )
    return out.rename_axis("epoch").reset_index()


def plot_period_curves(
    curves: Dict[str, pd.DataFrame],
    metric_label: str = "Validation F1",
    reference: Optional[float] = None,
    reference_name: str = "MIL teacher",
    scale: float = 100.0,
    **kwargs,
) -> go.Figure:
    """
    One line per arm with mean ± std error bars.

    :hierarchy: [Utils | Plots | PeriodCurves]
    :contract:
     - pre: "each frame has columns epoch, mean, std"
     - kwargs: Passed to fig.update_layout()
    """
    fig = go.Figure()
    for i, (name, frame) in enumerate(curves.items()):
        if frame.empty:
            continue
        fig.add_trace(
            go.Scatter(
                x=frame["epoch"],
                y=frame["mean"] * scale,
                error_y=dict(type="data", array=frame["std"] * scale, visible=True),
                mode="lines+markers",
                name=name,
                line=dict(color=ARM_COLORS[i % len(ARM_COLORS)], width=2),
            )
        )
    if reference is not None and not np.isnan(reference):
        fig.add_hline(
            y=reference * scale,
            line=dict(color="#888888", width=2, dash="dash"),
            annotation_text=reference_name,
        )
    fig.update_layout(xaxis_title="Epoch", yaxis_title=metric_label, template="plotly_white", **kwargs)
    if fig.data:
        return fig
    return go.Figure().add_annotation(text="No data available")


def plot_sweep(
    summary: pd.DataFrame, x: str, metric_label: str = "Test F1", scale: float = 100.0, **kwargs
) -> go.Figure:
    """
    Bar chart of an ablation sweep (columns ``x, mean, std``).

    :hierarchy: [Utils | Plots | Sweep]
    """
    if summary.empty:
        return go.Figure().add_annotation(text="No data available")
    fig = go.Figure(
        go.Bar(
            x=[str(v) for v in summary[x]],
            y=summary["mean"] * scale,
            error_y=dict(type="data", array=summary["std"] * scale, visible=True),
            marker_color="#3498db",
        )
    )
    fig.update_layout(xaxis_title=x, yaxis_title=metric_label, template="plotly_white", **kwargs)
    return fig


def export_figure(
    fig: go.Figure,
    path_stem: Union[str, Path],
    formats: Sequence[str] = ("html", "png"),
    width: int = 900,
    height: int = 600,
) -> List[Path]:
    """
    Write a figure to ``<path_stem>.<fmt>``.

    HTML is always written; image formats need kaleido and are skipped with a
    warning when it is missing.
    """
    logger = get_logger(__name__, export_figure)
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        target = stem.with_suffix(f".{fmt}")
        if fmt == "html":
            fig.write_html(target)
        else:
            try:
                fig.write_image(target, format=fmt, width=width, height=height)
            except (ImportError, ValueError, RuntimeError) as e:
                logger.warning(f"[Plots|Export] skipped {target.name}: {e}")
                continue
        written.append(target)
    return written
