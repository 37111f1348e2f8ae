"""Plotly chart generation for temporal relevance reports"""
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from backend.models import DatasetSummary, PartialEvalResult, RelevanceMatrix
from backend.tensor_io import atomic_write_text


class RelevanceCharts:
    """Generate interactive charts for relevance matrices and ATR summaries"""

    @staticmethod
    def create_heatmap(matrix: RelevanceMatrix) -> go.Figure:
        """Frame-to-frame relevance heatmap, target frames top to bottom"""
        a = np.asarray(matrix.a, dtype=np.float64)
        frames = list(range(a.shape[0]))

        fig = go.Figure(go.Heatmap(
            z=a,
            x=frames,
            y=frames,
            colorscale='Greys',
            reversescale=True,
            colorbar=dict(title='Relevance')
        ))

        fig.update_layout(
            title=f"Temporal relevance: {matrix.clip_id} (class {matrix.target_class}, {matrix.mode.value})",
            xaxis_title="Input frame j",
            yaxis_title="Target frame i",
            yaxis_autorange='reversed',
            template="plotly_white",
            height=500,
            width=550
        )

        return fig

    @staticmethod
    def create_window_curve(result: PartialEvalResult) -> go.Figure:
        """Accuracy over fixed window sizes, with the ATR policy as a separate point"""
        df = pd.DataFrame(result.points, columns=['label', 'accuracy', 'clip_count'])
        fixed = df[df['label'] != 'ATR'].assign(size=lambda d: d['label'].astype(int)).sort_values('size')
        atr = df[df['label'] == 'ATR']

        fig = go.Figure()

        fig.add_trace(go.Scatter(
            x=fixed['size'],
            y=fixed['accuracy'],
            mode='lines+markers',
            marker=dict(size=9, color='steelblue'),
            line=dict(width=2, color='steelblue'),
            name='Fixed window'
        ))

        # ATR point sits at the mean per-frame window size
        if not atr.empty:
            sizes = [s for sizes in result.run('ATR').window_sizes.values() for s in sizes]
            fig.add_trace(go.Scatter(
                x=[float(np.mean(sizes))],
                y=[float(atr['accuracy'].iloc[0])],
                mode='markers',
                marker=dict(size=12, color='green', symbol='diamond'),
                name='ATR windows'
            ))

        fig.update_layout(
            title="Partial uniform sampling",
            xaxis_title="Window size (frames)",
            yaxis_title="Accuracy",
            yaxis_range=[0, 1.05],
            template="plotly_white",
            height=400
        )

        return fig

    @staticmethod
    def create_class_atr_chart(summary: DatasetSummary,
                               class_names: Optional[Sequence[str]] = None) -> go.Figure:
        """Per-class avg-ATR in sorted order with population std error bars"""
        df = pd.DataFrame([
            {'class_id': c.class_id, 'mean': c.mean_avg_atr, 'std': c.std_avg_atr}
            for c in summary.per_class
        ]).sort_values(['mean', 'class_id'], ascending=[False, True])
        labels = [class_names[c] if class_names and c < len(class_names) else f"Class {c}"
                  for c in df['class_id']]

        fig = go.Figure()

        fig.add_trace(go.Bar(
            x=labels,
            y=df['mean'],
            error_y=dict(type='data', array=df['std']),
            marker_color='steelblue',
            text=df['mean'].round(2),
            textposition='auto',
            name='avg-ATR'
        ))

        fig.add_hline(y=summary.mean_avg_atr, line_dash="dash", line_color="orange",
                      annotation_text="Dataset mean")

        fig.update_layout(
            title="Average ATR by class",
            xaxis_title="Class",
            yaxis_title="avg-ATR (frames)",
            template="plotly_white",
            height=400
        )

        return fig

    @staticmethod
    def create_accuracy_scatter(accuracy: Sequence[float], avg_atr: Sequence[float],
                                labels: Sequence[str]) -> go.Figure:
        """Per-class accuracy against per-class avg-ATR"""
        fig = go.Figure()

        fig.add_trace(go.Scatter(
            x=list(avg_atr),
            y=list(accuracy),
            mode='markers',
            marker=dict(size=10, color='green'),
            text=list(labels),
            name='Class'
        ))

        fig.update_layout(
            title="Accuracy vs. avg-ATR",
            xaxis_title="avg-ATR (frames)",
            yaxis_title="Accuracy",
            template="plotly_white",
            height=400
        )

        return fig


def write_html(fig: go.Figure, path: Union[str, Path]) -> Path:
    """Standalone HTML (plotly.js from CDN), written atomically"""
    return atomic_write_text(path, fig.to_html(include_plotlyjs='cdn', full_html=True))
