"""Chart builder tests"""
import numpy as np

from backend.atr_metrics import aggregate, video_atr
from backend.models import PartialEvalResult, RelevanceMatrix, WindowRun
from frontend.charts import RelevanceCharts, write_html


def _matrix(clip_id="v"):
    return RelevanceMatrix(a=np.eye(3), logits=np.ones(3), target_class=1, clip_id=clip_id)


def test_heatmap_figure(tmp_path):
    """Test the heatmap figure carries the matrix and writes standalone HTML"""
    fig = RelevanceCharts.create_heatmap(_matrix())
    assert fig.data[0].type == "heatmap"
    assert np.array_equal(np.asarray(fig.data[0].z), np.eye(3))
    path = write_html(fig, tmp_path / "figures" / "heatmap.html")
    assert "plotly" in path.read_text()


def test_window_curve_sorts_sizes_and_marks_atr():
    """Test window sizes plot in ascending order and the ATR run sits at its mean window"""
    runs = tuple(
        WindowRun(label=label, accuracy=acc, clip_count=1, predictions={"v": np.array([1.0])},
                  window_sizes={"v": sizes}, kept_logits={"v": np.zeros((2, 1))})
        for label, acc, sizes in (("4", 1.0, (4, 4)), ("1", 0.5, (1, 1)), ("ATR", 1.0, (1, 3)))
    )
    fig = RelevanceCharts.create_window_curve(PartialEvalResult(runs=runs))
    assert list(fig.data[0].x) == [1, 4]
    assert list(fig.data[1].x) == [2.0]


def test_class_atr_chart_orders_by_mean():
    """Test classes are ordered by descending mean avg-ATR"""
    reports = [(video_atr(_matrix("a"), 0.975), 0),
               (video_atr(RelevanceMatrix(a=np.ones((3, 3)), logits=np.ones(3), target_class=1,
                                          clip_id="b"), 0.975), 1)]
    fig = RelevanceCharts.create_class_atr_chart(aggregate(reports), ["walk", "wave"])
    assert list(fig.data[0].x) == ["wave", "walk"]


def test_accuracy_scatter():
    """Test the scatter plots avg-ATR against accuracy with class labels"""
    fig = RelevanceCharts.create_accuracy_scatter([0.5, 1.0], [2.0, 3.0], ["a", "b"])
    assert list(fig.data[0].x) == [2.0, 3.0]
    assert list(fig.data[0].text) == ["a", "b"]
