"""
Attention Visualization Module for the uncertainty attention lab.

This module provides the workflow behind the ``visualize`` command:
predict the attention map of each requested example, upsample and smooth
it, overlay it on a synthesized base image and write
``<id>.raw.pgm``, ``<id>.smoothed.pgm`` and ``<id>.overlay.ppm``.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

from config import echo_effective_config
from models.data_models import Example, RasterImage, RunConfig
from models.errors import ValidationError
from services.attention_model import make_batch, predict
from services.storage_service import check_dataset_compatible, load_checkpoint, load_dataset
from services.visualization_manager import VisualizationManager

logger = logging.getLogger(__name__)

STAGE_FORMATS = {"raw": "pgm", "smoothed": "pgm", "overlay": "ppm"}


def run_attention_visualization_module(config: RunConfig, checkpoint_path: Union[str, Path],
                                       data_path: Union[str, Path], example_ids: Sequence[str],
                                       out_dir: Union[str, Path]) -> Dict[str, List[Path]]:
    """
    Renders attention maps of the given examples.

    Args:
        config: Validated run configuration
        checkpoint_path: Trained checkpoint
        data_path: Dataset holding the examples
        example_ids: Ids to render; every id must exist
        out_dir: Output directory

    Returns:
        Mapping of example id to its three written files
    """
    if not example_ids:
        raise ValidationError("at least one example id is required")
    params, _, _ = load_checkpoint(checkpoint_path, expected=config.model)
    dataset = load_dataset(data_path)
    check_dataset_compatible(dataset, config.model)
    unknown = [i for i in example_ids if dataset.find(i) is None]
    if unknown:
        raise ValidationError(f"unknown example id(s): {', '.join(unknown)}")
    examples = [dataset.find(i) for i in example_ids]

    out_dir = Path(out_dir)
    echo_effective_config(config, out_dir)
    rendered = _run_attention_visualization_workflow(examples, params, config)
    written = {}
    for example_id, images in rendered.items():
        written[example_id] = [
            VisualizationManager.write_image(image, out_dir / f"{example_id}.{stage}.{STAGE_FORMATS[stage]}")
            for stage, image in images.items()
        ]
    _display_attention_visualization_results(written)
    return written


def _run_attention_visualization_workflow(examples: List[Example], params,
                                          config: RunConfig) -> Dict[str, Dict[str, RasterImage]]:
    viz = config.visualization
    _, attention = predict(make_batch(examples, config.model), params, config.model)
    rendered = {}
    for example, grid in zip(examples, attention):
        base = VisualizationManager.synthesize_base_image(example, viz.image_size, config.dataset.marker_kinds)
        rendered[example.example_id] = VisualizationManager.render_attention(
            grid, base, viz.kernel_size, viz.sigma, viz.gain,
        )
    logger.info("✓ Rendered %d attention maps", len(rendered))
    return rendered


def _display_attention_visualization_results(written: Dict[str, List[Path]]):
    for example_id, paths in written.items():
        print(f"{example_id}: " + ", ".join(p.name for p in paths))
