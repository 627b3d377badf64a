"""
Tests for training-curve aggregation and figure export.

:hierarchy: [Testing | Unit Tests | Utils | Plots]
:complexity: 2
"""

import pandas as pd
import plotly.graph_objects as go
import pytest

from ikd_mil.utils.plots import aggregate_period_curves, export_figure, plot_period_curves, plot_sweep


def _frame(scores):
    return pd.DataFrame(
        {"epoch": range(1, len(scores) + 1), "stage": "distill", "val_f1": scores}
    )


class TestAggregate:
    def test_mean_and_std_across_repeats(self):
        frames = [_frame([0.5, 0.6, 0.7, 0.6]), _frame([0.7, 0.4, 0.5, 0.5])]

        curve = aggregate_period_curves(frames, period=2)

        assert curve["epoch"].tolist() == [2, 4]
        assert curve["mean"].tolist() == pytest.approx([0.65, 0.6])
        assert curve["std"].tolist() == pytest.approx([0.05, 0.1])
        assert curve["n"].tolist() == [2, 2]

    def test_single_repeat_has_zero_std(self):
        curve = aggregate_period_curves([_frame([0.1, 0.3])], period=1)

        assert curve["std"].tolist() == [0.0, 0.0]

    def test_no_rows(self):
        curve = aggregate_period_curves([_frame([0.5]).assign(stage="mil")], period=1)

        assert curve.empty
        assert list(curve.columns) == ["epoch", "mean", "std", "n"]


class TestFigures:
    def test_period_curves_with_reference(self):
        curve = aggregate_period_curves([_frame([0.5, 0.6])], period=1)

        fig = plot_period_curves({"switch": curve, "no-switch": curve}, reference=0.55, title="arms")

        assert isinstance(fig, go.Figure)
        assert [t.name for t in fig.data] == ["switch", "no-switch"]
        assert list(fig.data[0].y) == pytest.approx([50.0, 60.0])
        assert fig.layout.title.text == "arms"
        assert len(fig.layout.shapes) == 1

    def test_period_curves_without_data(self):
        fig = plot_period_curves({"empty": aggregate_period_curves([], period=1)})

        assert len(fig.data) == 0
        assert fig.layout.annotations[0].text == "No data available"

    def test_sweep_bars(self):
        summary = pd.DataFrame({"a": [0.0, 0.25], "mean": [0.7, 0.8], "std": [0.01, 0.02]})

        fig = plot_sweep(summary, x="a")

        assert list(fig.data[0].x) == ["0.0", "0.25"]
        assert list(fig.data[0].y) == pytest.approx([70.0, 80.0])


class TestExport:
    def test_html_always_written(self, tmp_path, mocker):
        mocker.patch.object(go.Figure, "write_image", side_effect=ValueError("kaleido missing"))
        fig = go.Figure(go.Scatter(x=[1, 2], y=[3, 4]))

        written = export_figure(fig, tmp_path / "plots" / "curves")

        assert written == [tmp_path / "plots" / "curves.html"]
        assert written[0].exists()

    def test_image_formats_delegate_to_write_image(self, tmp_path, mocker):
        write_image = mocker.patch.object(go.Figure, "write_image")
        fig = go.Figure()

        written = export_figure(fig, tmp_path / "f", formats=("png", "svg"), width=400, height=300)

        assert [p.suffix for p in written] == [".png", ".svg"]
        write_image.assert_any_call(tmp_path / "f.svg", format="svg", width=400, height=300)
