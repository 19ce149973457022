"""
Dataset Generation Module for the uncertainty attention lab.

This module provides the workflow behind the ``generate`` command:
synthesize grid question-answering examples, split them, inject label
noise into the training split and write JSON-lines files.
"""

import logging
from pathlib import Path
from typing import Dict, Union

from config import echo_effective_config
from models.data_models import Dataset, RunConfig
from services.storage_service import save_dataset
from services.visualization_manager import VisualizationManager
from simulators.grid_vqa_simulator import GridVQASimulator

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


def run_dataset_generation_module(config: RunConfig, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Generates train/val/test dataset files.

    Args:
        config: Validated run configuration
        out_dir: Directory receiving train.jsonl, val.jsonl, test.jsonl

    Returns:
        Mapping of split name to written file
    """
    out_dir = Path(out_dir)
    # Prototype placement may fail; nothing is written before it succeeds
    simulator = GridVQASimulator(config.dataset)
    echo_effective_config(config, out_dir)
    splits = _run_dataset_generation_workflow(simulator, config)
    paths = {}
    for name, dataset in splits.items():
        paths[name] = out_dir / f"{name}.jsonl"
        save_dataset(dataset, paths[name])
    _display_dataset_generation_results(splits, paths)
    return paths


def _run_dataset_generation_workflow(simulator: GridVQASimulator, config: RunConfig) -> Dict[str, Dataset]:
    """
    Executes the generation workflow:
    1. Generate examples
    2. Split into train/val/test
    3. Relabel a fraction of the training split
    """
    dataset = simulator.generate()
    logger.info("✓ Generated %d examples", len(dataset))

    train, val, test = simulator.split(
        dataset, (config.train_fraction, config.val_fraction, config.test_fraction),
    )
    if config.noise_fraction > 0:
        train = simulator.inject_label_noise(train, config.noise_fraction)
        logger.info("✓ Flagged %d noisy training labels", sum(e.noisy for e in train))
    return dict(zip(SPLIT_NAMES, (train, val, test)))


def _display_dataset_generation_results(splits: Dict[str, Dataset], paths: Dict[str, Path]):
    rows = [
        {
            "split": name,
            "examples": len(dataset),
            "noisy": sum(e.noisy for e in dataset),
            "file": str(paths[name]),
        }
        for name, dataset in splits.items()
    ]
    table = VisualizationManager.format_results_table(rows, ["split", "examples", "noisy", "file"])
    print(table.to_string(index=False))
