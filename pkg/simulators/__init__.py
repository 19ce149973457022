"""Simulator components for generating synthetic grid question-answering data."""

from .grid_vqa_simulator import GridVQASimulator

__all__ = [
    "GridVQASimulator"
]
