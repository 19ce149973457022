"""Core services: autodiff engine, model, training, uncertainty, metrics, storage and rendering"""

from .visualization_manager import VisualizationManager

__all__ = [
    'VisualizationManager'
]
