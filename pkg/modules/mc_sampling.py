"""
Monte-Carlo Sampling Module for the uncertainty attention lab.

This module provides the workflow behind the ``mc-sample`` command: for
each selected example it draws T dropout samples, records per-sample
logits and uncertainties as JSON and renders one certainty map per sample.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from config import echo_effective_config
from models.data_models import Example, RunConfig, UncertaintyEstimate
from models.errors import ValidationError
from services.attention_model import make_batch
from services.autodiff import RngStream
from services.gca_trainer import StepStreams, certainty_attention_maps
from services.metrics_service import MC_STREAM
from services.storage_service import check_dataset_compatible, load_checkpoint, load_dataset, write_json
from services.uncertainty_service import mc_predict_batch, predictive_entropy
from services.visualization_manager import VisualizationManager

logger = logging.getLogger(__name__)

MAP_DROPOUT_STREAM = 7
MAP_NOISE_STREAM = 8
DEFAULT_EXAMPLE_LIMIT = 4


def run_mc_sampling_module(config: RunConfig, checkpoint_path: Union[str, Path], data_path: Union[str, Path],
                           out_dir: Union[str, Path], samples: Optional[int] = None,
                           example_ids: Optional[Sequence[str]] = None,
                           limit: int = DEFAULT_EXAMPLE_LIMIT) -> Dict[str, Path]:
    """
    Writes per-sample dumps for selected examples.

    Args:
        config: Validated run configuration
        checkpoint_path: Trained checkpoint
        data_path: Dataset holding the examples
        out_dir: Output directory
        samples: Monte-Carlo passes T (defaults to train.eval_mc_samples)
        example_ids: Examples to sample (defaults to the first ``limit`` examples)
        limit: Number of examples when no ids are given

    Returns:
        Mapping of example id to its JSON record file
    """
    samples = config.train.eval_mc_samples if samples is None else samples
    if samples < 1:
        raise ValidationError(f"number of Monte-Carlo samples must be at least 1, got {samples}")
    params, _, _ = load_checkpoint(checkpoint_path, expected=config.model)
    dataset = load_dataset(data_path)
    check_dataset_compatible(dataset, config.model)
    if example_ids:
        unknown = [i for i in example_ids if dataset.find(i) is None]
        if unknown:
            raise ValidationError(f"unknown example id(s): {', '.join(unknown)}")
        examples = [dataset.find(i) for i in example_ids]
    else:
        if limit < 1:
            raise ValidationError("limit must be at least 1")
        examples = dataset.examples[:limit]

    out_dir = Path(out_dir)
    echo_effective_config(config, out_dir)
    estimates, certainty_maps, attention = _run_mc_sampling_workflow(examples, params, config, samples)
    paths = {}
    for index, example in enumerate(examples):
        paths[example.example_id] = _write_example_dump(
            example, estimates[index], certainty_maps[index], attention[index], config, out_dir,
        )
    _display_mc_sampling_results(examples, estimates)
    return paths


def _run_mc_sampling_workflow(examples: List[Example], params, config: RunConfig, samples: int):
    """
    Executes the sampling workflow:
    1. Monte-Carlo estimates with per-sample logits
    2. One certainty map per sample, each under its own dropout draw

    Returns:
        Tuple of (estimates, certainty maps (B, T, u, v), attention maps (B, u, v))
    """
    seed = config.train.seed
    estimates = mc_predict_batch(
        examples, params, config.model, RngStream(seed, MC_STREAM), samples, config.train.dropout_rate,
    )
    batch = make_batch(examples, config.model)
    streams = StepStreams(dropout=RngStream(seed, MAP_DROPOUT_STREAM), noise=RngStream(seed, MAP_NOISE_STREAM))
    maps = []
    attention = None
    for _ in range(samples):
        sample_maps, attention = certainty_attention_maps(
            batch, params, config.train, config.model, streams, training=config.train.dropout_rate > 0,
        )
        maps.append(sample_maps)
    logger.info("✓ Drew %d samples for %d examples", samples, len(examples))
    return estimates, np.stack(maps, axis=1), attention


def _render_map(grid: np.ndarray, config: RunConfig):
    viz = config.visualization
    size = viz.image_size
    upsampled = VisualizationManager.upsample_bicubic(grid, (size, size))
    smoothed = VisualizationManager.gaussian_smooth(upsampled, viz.kernel_size, viz.sigma)
    return VisualizationManager.to_gray_image(smoothed)


def _write_example_dump(example: Example, estimate: UncertaintyEstimate, certainty_maps: np.ndarray,
                        attention: np.ndarray, config: RunConfig, out_dir: Path) -> Path:
    record = {
        "example_id": example.example_id,
        "answer": example.answer,
        **estimate.to_dict(),
        "per_sample_logits": estimate.per_sample_logits.tolist(),
        "per_sample_entropy": [predictive_entropy(p) for p in estimate.per_sample_probs],
        "attention": attention.tolist(),
    }
    path = out_dir / f"{example.example_id}.json"
    write_json(record, path)
    VisualizationManager.write_image(_render_map(attention, config), out_dir / f"{example.example_id}.attention.pgm")
    for t, grid in enumerate(certainty_maps):
        VisualizationManager.write_image(
            _render_map(grid, config), out_dir / f"{example.example_id}.sample-{t:03d}.pgm",
        )
    return path


def _display_mc_sampling_results(examples: List[Example], estimates: List[UncertaintyEstimate]):
    rows = [
        {
            "example_id": example.example_id,
            "prediction": int(np.argmax(estimate.mean_probs)),
            "answer": example.answer,
            "entropy": estimate.entropy,
            "predictive": estimate.predictive,
        }
        for example, estimate in zip(examples, estimates)
    ]
    columns = ["example_id", "prediction", "answer", "entropy", "predictive"]
    print(VisualizationManager.format_results_table(rows, columns).to_string(index=False))
