"""
Visualization Manager for the uncertainty attention lab.

This module provides static methods for the attention rendering pipeline
(bicubic upsampling, Gaussian smoothing, overlay, PGM/PPM files) and for
the plotly figures and pandas tables used in command reports.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
import plotly.express as px
from scipy.ndimage import correlate1d

from models.data_models import AttentionMap, Example, RasterImage
from models.errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

BICUBIC_A = -0.5


def _keys_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(x)
    near = (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    far = a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _bicubic_weights(source: int, target: int) -> np.ndarray:
    """(target, source) interpolation matrix with pixel-center alignment and clamped edges."""
    weights = np.zeros((target, source))
    centers = (np.arange(target) + 0.5) * (source / target) - 0.5
    base = np.floor(centers).astype(int)
    for offset in range(-1, 3):
        taps = base + offset
        w = _keys_kernel(centers - taps)
        np.add.at(weights, (np.arange(target), np.clip(taps, 0, source - 1)), w)
    return weights


def _renormalize(grid: np.ndarray) -> np.ndarray:
    total = grid.sum()
    return grid / total if total > 0 else grid


def _no_data_figure(message: str = "No data available") -> go.Figure:
    fig = go.Figure()
    fig.add_annotation(
        text=message,
        xref="paper", yref="paper",
        x=0.5, y=0.5, showarrow=False,
        font=dict(size=16)
    )
    return fig


class VisualizationManager:
    """
    Manages attention rendering and report formatting.
    All methods are static to allow easy usage across modules.
    """

    # ------------------------------------------------------------------
    # Attention rendering pipeline
    # ------------------------------------------------------------------

    @staticmethod
    def upsample_bicubic(attention: Union[AttentionMap, np.ndarray], target: Tuple[int, int]) -> np.ndarray:
        """
        Upsamples an attention map with the bicubic kernel (a = -0.5).

        Args:
            attention: Map of shape (rows, cols)
            target: Output (width, height) in pixels

        Returns:
            Nonnegative grid of shape (height, width) summing to 1
        """
        grid = attention.grid if isinstance(attention, AttentionMap) else np.asarray(attention, dtype=np.float64)
        rows, cols = grid.shape
        width, height = target
        if width < cols or height < rows:
            raise ValidationError(f"upsampling target {target} is smaller than the map ({cols}x{rows})")
        upsampled = _bicubic_weights(rows, height) @ grid @ _bicubic_weights(cols, width).T
        return _renormalize(np.clip(upsampled, 0.0, None))

    @staticmethod
    def gaussian_smooth(grid: np.ndarray, kernel_size: int = 31, sigma: float = 1.0) -> np.ndarray:
        """
        Separable Gaussian smoothing with a normalized kernel and clamped edges.

        Args:
            grid: 2-D grid
            kernel_size: Odd kernel side length
            sigma: Per-axis standard deviation in pixels

        Returns:
            Smoothed grid summing to 1
        """
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValidationError(f"kernel size must be a positive odd integer, got {kernel_size}")
        if sigma <= 0:
            raise ValidationError("sigma must be positive")
        grid = np.asarray(grid, dtype=np.float64)
        if min(grid.shape) <= kernel_size:
            raise ValidationError(f"grid {grid.shape} must be larger than the {kernel_size}x{kernel_size} kernel")
        half = kernel_size // 2
        offsets = np.arange(-half, half + 1, dtype=np.float64)
        kernel = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
        kernel /= kernel.sum()
        smoothed = correlate1d(grid, kernel, axis=0, mode="nearest")
        smoothed = correlate1d(smoothed, kernel, axis=1, mode="nearest")
        return _renormalize(np.clip(smoothed, 0.0, None))

    @staticmethod
    def to_gray_image(grid: np.ndarray) -> RasterImage:
        """Max-normalized grayscale rendering of a nonnegative grid."""
        grid = np.asarray(grid, dtype=np.float64)
        peak = grid.max()
        scaled = grid / peak if peak > 0 else np.zeros_like(grid)
        samples = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
        height, width = grid.shape
        return RasterImage(width=width, height=height, channels=1, samples=samples[:, :, None])

    @staticmethod
    def render_overlay(smoothed: np.ndarray, base: RasterImage, gain: float = 1.0) -> Tuple[RasterImage, RasterImage]:
        """
        Multiplies the base image by the max-normalized map times ``gain``.

        Returns:
            Tuple of (overlay image, standalone grayscale map)
        """
        smoothed = np.asarray(smoothed, dtype=np.float64)
        if smoothed.shape != (base.height, base.width):
            raise ShapeError(f"map {smoothed.shape} does not match image {(base.height, base.width)}")
        peak = smoothed.max()
        factor = smoothed / peak if peak > 0 else np.zeros_like(smoothed)
        blended = base.samples.astype(np.float64) * (factor * gain)[:, :, None]
        samples = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
        overlay = RasterImage(width=base.width, height=base.height, channels=base.channels, samples=samples)
        return overlay, VisualizationManager.to_gray_image(smoothed)

    @staticmethod
    def synthesize_base_image(example: Example, size: int, marker_kinds: int) -> RasterImage:
        """
        RGB stand-in for the example's image: one flat block per cell, colored
        from its first three attribute channels (cycled when fewer) and
        brightened on marked cells.
        """
        rows, cols, width = example.grid.shape
        if width - marker_kinds < 1:
            raise ValidationError("base image synthesis needs at least one attribute channel")
        channels = [marker_kinds + (k % (width - marker_kinds)) for k in range(3)]
        attributes = example.grid[:, :, channels]
        marked = example.grid[:, :, :marker_kinds].max(axis=2, initial=0.0) > 0.5
        colors = 96.0 + 127.0 / (1.0 + np.exp(-attributes))
        colors[marked] = np.minimum(colors[marked] + 32.0, 255.0)
        row_index = np.minimum(np.arange(size) * rows // size, rows - 1)
        col_index = np.minimum(np.arange(size) * cols // size, cols - 1)
        pixels = colors[row_index][:, col_index]
        return RasterImage(width=size, height=size, channels=3, samples=np.rint(pixels).astype(np.uint8))

    @staticmethod
    def render_attention(attention: Union[AttentionMap, np.ndarray], base: RasterImage, kernel_size: int,
                         sigma: float, gain: float) -> Dict[str, RasterImage]:
        """
        Full pipeline: upsample to the base size, smooth, overlay.

        Returns:
            {"raw": grayscale upsampled map, "smoothed": grayscale smoothed map, "overlay": overlay}
        """
        upsampled = VisualizationManager.upsample_bicubic(attention, (base.width, base.height))
        smoothed = VisualizationManager.gaussian_smooth(upsampled, kernel_size, sigma)
        overlay, smoothed_gray = VisualizationManager.render_overlay(smoothed, base, gain)
        return {
            "raw": VisualizationManager.to_gray_image(upsampled),
            "smoothed": smoothed_gray,
            "overlay": overlay,
        }

    # ------------------------------------------------------------------
    # Portable graymap / pixmap files
    # ------------------------------------------------------------------

    @staticmethod
    def write_image(image: RasterImage, path: Union[str, Path], fmt: Optional[str] = None) -> Path:
        """
        Writes a binary PGM (P5, 1 channel) or PPM (P6, 3 channels) file.

        Args:
            image: Image to write
            path: Destination
            fmt: "pgm" or "ppm"; inferred from the suffix when omitted
        """
        path = Path(path)
        fmt = (fmt or path.suffix.lstrip(".")).lower()
        expected = {"pgm": 1, "ppm": 3}
        if fmt not in expected:
            raise ValidationError(f"unsupported image format '{fmt}' (use pgm or ppm)")
        if image.channels != expected[fmt]:
            raise ValidationError(f"{fmt.upper()} needs {expected[fmt]} channel(s), image has {image.channels}")
        magic = b"P5" if fmt == "pgm" else b"P6"
        header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(header + image.samples.astype(np.uint8).tobytes())
        except OSError as e:
            raise ValidationError(f"cannot write {path}: {e}") from e
        return path

    @staticmethod
    def read_image(path: Union[str, Path]) -> RasterImage:
        """Reads a binary PGM/PPM file with max value 255."""
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"image file not found: {path}")
        data = path.read_bytes()
        tokens: List[bytes] = []
        position = 0
        while len(tokens) < 4:
            while position < len(data) and data[position:position + 1].isspace():
                position += 1
            if data[position:position + 1] == b"#":
                while position < len(data) and data[position:position + 1] not in (b"\n", b"\r"):
                    position += 1
                continue
            start = position
            while position < len(data) and not data[position:position + 1].isspace():
                position += 1
            if start == position:
                raise ValidationError(f"{path}: truncated header")
            tokens.append(data[start:position])
        position += 1
        magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
        if magic not in (b"P5", b"P6"):
            raise ValidationError(f"{path}: not a binary PGM/PPM file")
        if maxval != 255:
            raise ValidationError(f"{path}: only 8-bit images are supported")
        channels = 1 if magic == b"P5" else 3
        count = width * height * channels
        body = data[position:position + count]
        if len(body) != count:
            raise ValidationError(f"{path}: expected {count} samples, found {len(body)}")
        samples = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels).copy()
        return RasterImage(width=width, height=height, channels=channels, samples=samples)

    @staticmethod
    def read_attention_pgm(path: Union[str, Path], extents: Tuple[int, int]) -> np.ndarray:
        """Reads a grayscale attention map and renormalizes it to sum 1."""
        image = VisualizationManager.read_image(path)
        if image.channels != 1:
            raise ValidationError(f"{path}: attention maps must be grayscale")
        grid = image.samples[:, :, 0].astype(np.float64)
        if grid.shape != tuple(extents):
            raise ShapeError(f"{path}: map is {grid.shape}, expected {tuple(extents)}")
        if grid.sum() <= 0:
            raise ValidationError(f"{path}: attention map is all zero")
        return grid / grid.sum()

    # ------------------------------------------------------------------
    # Report figures
    # ------------------------------------------------------------------

    @staticmethod
    def create_training_curves(summary: pd.DataFrame) -> go.Figure:
        """
        Creates line charts of classification loss, distorted loss spread and accuracy per epoch.

        Args:
            summary: Per-epoch summary indexed by epoch

        Returns:
            Plotly Figure object with line chart
        """
        if summary is None or summary.empty:
            return _no_data_figure()

        epochs = summary.index.tolist()
        fig = go.Figure()
        fig.add_trace(go.Scatter(
            x=epochs, y=summary['classification_mean'], mode='lines+markers',
            name='Classification loss', line=dict(color='#FF6B6B')
        ))
        fig.add_trace(go.Scatter(
            x=epochs, y=summary['distorted_mean'], mode='lines+markers',
            name='Distorted loss',
            error_y=dict(type='data', array=summary['distorted_std'], visible=True),
            line=dict(color='#4ECDC4')
        ))
        fig.add_trace(go.Scatter(
            x=epochs, y=summary['accuracy_mean'], mode='lines+markers',
            name='Train accuracy', yaxis='y2', line=dict(color='#556270', dash='dot')
        ))
        fig.update_layout(
            title='Training Curves',
            xaxis_title='Epoch',
            yaxis_title='Loss',
            yaxis2=dict(title='Accuracy', overlaying='y', side='right', range=[0, 1]),
            hovermode='x unified',
            template='plotly_white',
            height=500
        )
        return fig

    @staticmethod
    def create_uncertainty_error_chart(predictive: Sequence[float], errors: Sequence[float],
                                       wrong: Sequence[bool]) -> go.Figure:
        """
        Creates a scatter chart of predictive uncertainty against classification error.

        Args:
            predictive: σ²_p per example
            errors: log 1/(1 - p_miss) per example (infinite values are skipped)
            wrong: Misclassification flag per example

        Returns:
            Plotly Figure object with scatter chart
        """
        points = [(p, e, w) for p, e, w in zip(predictive, errors, wrong) if np.isfinite(e)]
        if not points:
            return _no_data_figure()

        fig = go.Figure()
        for flag, name, color in ((False, 'Correct', '#4ECDC4'), (True, 'Misclassified', '#FF6B6B')):
            subset = [(p, e) for p, e, w in points if w == flag]
            if subset:
                fig.add_trace(go.Scatter(
                    x=[p for p, _ in subset], y=[e for _, e in subset],
                    mode='markers', name=name, marker=dict(color=color, size=6, opacity=0.7),
                    hovertemplate='σ²_p: %{x:.4f}<br>Error: %{y:.4f}<extra></extra>'
                ))
        fig.update_layout(
            title='Uncertainty vs Classification Error',
            xaxis_title='Predictive uncertainty σ²_p',
            yaxis_title='log 1/(1 - p_miss)',
            template='plotly_white',
            height=500
        )
        return fig

    @staticmethod
    def create_ablation_chart(table: pd.DataFrame) -> go.Figure:
        """
        Creates grouped bars of accuracy and rank correlation per training mode.

        Args:
            table: Ablation table with columns mode, accuracy, rank_correlation

        Returns:
            Plotly Figure object with grouped bar chart
        """
        if table is None or table.empty:
            return _no_data_figure()

        grouped = table.groupby('mode', sort=False)[['accuracy', 'rank_correlation']].mean()
        modes = grouped.index.tolist()
        colors = px.colors.qualitative.Set2
        fig = go.Figure(data=[
            go.Bar(name='Accuracy', x=modes, y=grouped['accuracy'], marker_color=colors[0],
                   text=[f'{v:.3f}' for v in grouped['accuracy']], textposition='auto'),
            go.Bar(name='Rank correlation', x=modes, y=grouped['rank_correlation'], marker_color=colors[1],
                   text=[f'{v:.3f}' for v in grouped['rank_correlation'].fillna(0.0)], textposition='auto'),
        ])
        fig.update_layout(
            title='Ablation: Validation Accuracy and Attention Rank Correlation',
            xaxis_title='Training mode',
            barmode='group',
            template='plotly_white',
            height=500,
            xaxis={'categoryorder': 'array', 'categoryarray': modes}
        )
        return fig

    @staticmethod
    def write_html_report(figures: Dict[str, go.Figure], path: Union[str, Path], title: str) -> Path:
        """
        Writes figures into one HTML page. Each figure gets a fixed div id
        (its key) so repeated runs produce identical files.
        """
        path = Path(path)
        sections = [
            fig.to_html(full_html=False, include_plotlyjs='cdn' if index == 0 else False, div_id=key)
            for index, (key, fig) in enumerate(figures.items())
        ]
        page = (
            "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>"
            f"{title}</title></head>\n<body>\n<h1>{title}</h1>\n"
            + "\n".join(sections)
            + "\n</body>\n</html>\n"
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(page, encoding="utf-8")
        return path

    # ------------------------------------------------------------------
    # Tables
    # ------------------------------------------------------------------

    @staticmethod
    def format_results_table(data: List[Dict], columns: List[str]) -> pd.DataFrame:
        """
        Formats data as a pandas DataFrame for console display.

        Args:
            data: List of dictionaries containing result data
            columns: List of column names to include in the DataFrame

        Returns:
            Pandas DataFrame formatted for display
        """
        if not data:
            return pd.DataFrame()

        formatted_data = []
        for item in data:
            row = {}
            for col in columns:
                value = item.get(col, '')
                if value is None:
                    row[col] = 'n/a'
                elif isinstance(value, float):
                    if 'accuracy' in col.lower() or 'fraction' in col.lower():
                        row[col] = f'{value * 100:.2f}%'
                    else:
                        row[col] = f'{value:.4f}'
                elif isinstance(value, bool):
                    row[col] = 'yes' if value else 'no'
                elif isinstance(value, int):
                    row[col] = f'{value:,}'
                elif isinstance(value, list):
                    row[col] = ', '.join(str(v) for v in value)
                else:
                    row[col] = str(value)
            formatted_data.append(row)

        df = pd.DataFrame(formatted_data)
        df = df[columns] if all(col in df.columns for col in columns) else df
        return df
