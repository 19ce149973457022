"""
Evaluation Module for the uncertainty attention lab.

This module provides the workflow behind the ``eval`` command: accuracy,
attention quality against planted (or supplied) attention maps, and the
uncertainty reports of a trained checkpoint.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from config import echo_effective_config
from models.data_models import Dataset, MetricsReport, RunConfig
from models.errors import ValidationError
from services.metrics_service import EXACT_EMD_MAX_BINS, epistemic_sweep, evaluate_model
from services.storage_service import check_dataset_compatible, load_checkpoint, load_dataset, write_json
from services.visualization_manager import VisualizationManager

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.json"
REPORT_NAME = "evaluation_report.html"


def run_evaluation_module(config: RunConfig, checkpoint_path: Union[str, Path], data_path: Union[str, Path],
                          out_dir: Union[str, Path], self_check: bool = False,
                          attention_pgm_dir: Optional[Union[str, Path]] = None,
                          sweep_train_path: Optional[Union[str, Path]] = None,
                          subset_report: bool = False, html_report: bool = False) -> MetricsReport:
    """
    Evaluates a checkpoint and writes metrics.json.

    Args:
        config: Validated run configuration
        checkpoint_path: Checkpoint to evaluate; its architecture must match config.model
        data_path: Evaluation split
        out_dir: Output directory
        self_check: Compare the model attention against itself
        attention_pgm_dir: Directory of <example-id>.pgm reference attention maps
        sweep_train_path: Training split for the epistemic sweep (sweep runs only when given)
        subset_report: Always include the noisy/clean aleatoric comparison
        html_report: Also write the uncertainty vs error chart as HTML

    Returns:
        MetricsReport
    """
    cells = config.model.grid_rows * config.model.grid_cols
    if config.metrics.emd_method == "exact_small" and cells > EXACT_EMD_MAX_BINS:
        raise ValidationError(
            f"exact EMD supports at most {EXACT_EMD_MAX_BINS} cells, maps have {cells}; "
            "use --emd-method sinkhorn"
        )
    params, _, _ = load_checkpoint(checkpoint_path, expected=config.model)
    dataset = load_dataset(data_path)
    check_dataset_compatible(dataset, config.model)
    sweep_train = None
    if sweep_train_path is not None:
        sweep_train = load_dataset(sweep_train_path)
        check_dataset_compatible(sweep_train, config.model)
    reference_maps = _load_reference_maps(dataset, attention_pgm_dir, config) if attention_pgm_dir else None

    out_dir = Path(out_dir)
    echo_effective_config(config, out_dir)
    report, estimates, predictions = _run_evaluation_workflow(
        dataset, params, config, reference_maps, self_check, subset_report, sweep_train,
    )
    write_json(report.to_dict(), out_dir / METRICS_NAME)
    if html_report:
        errors = report.uncertainty_error.classification_errors
        figure = VisualizationManager.create_uncertainty_error_chart(
            [e.predictive for e in estimates], errors,
            [int(p) != e.answer for p, e in zip(predictions, dataset)],
        )
        VisualizationManager.write_html_report({"uncertainty-error": figure}, out_dir / REPORT_NAME, "Evaluation")
    _display_evaluation_results(report)
    return report


def _load_reference_maps(dataset: Dataset, directory: Union[str, Path], config: RunConfig) -> Dict[str, np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"attention map directory not found: {directory}")
    extents = (config.model.grid_rows, config.model.grid_cols)
    maps = {}
    for example in dataset:
        path = directory / f"{example.example_id}.pgm"
        if path.is_file():
            maps[example.example_id] = VisualizationManager.read_attention_pgm(path, extents)
    missing = len(dataset) - len(maps)
    if missing:
        logger.warning("⚠️ %d examples have no map in %s; their planted attention is used", missing, directory)
    return maps


def _run_evaluation_workflow(dataset: Dataset, params, config: RunConfig, reference_maps, self_check: bool,
                             subset_report: bool, sweep_train: Optional[Dataset]):
    """
    Executes the evaluation workflow:
    1. Deterministic predictions and attention maps
    2. Monte-Carlo uncertainty estimates
    3. Optional epistemic sweep over training fractions
    """
    report, estimates, predictions, _ = evaluate_model(
        dataset, params, config, reference_maps=reference_maps, self_check=self_check,
        subset_report=subset_report,
    )
    logger.info("✓ Evaluated %d examples", report.num_examples)
    if sweep_train is not None:
        report.epistemic_sweep = epistemic_sweep(sweep_train, dataset, config.metrics.sweep_fractions, config)
    return report, estimates, predictions


def _display_evaluation_results(report: MetricsReport):
    errors = report.uncertainty_error
    rows = [{
        "accuracy": report.accuracy,
        "rank_correlation": report.rank_correlation,
        "emd": report.emd,
        "mean_predictive_correct": errors.mean_predictive_correct,
        "mean_predictive_wrong": errors.mean_predictive_wrong,
        "point_biserial": errors.point_biserial,
    }]
    print(VisualizationManager.format_results_table(rows, list(rows[0])).to_string(index=False))
    if errors.num_infinite:
        logger.warning("⚠️ %d examples had zero probability on their label and were left out of the error means",
                       errors.num_infinite)
    if report.subset_aleatoric:
        print(VisualizationManager.format_results_table(
            [{"subset": k, "mean_aleatoric_variance": v} for k, v in report.subset_aleatoric.items()],
            ["subset", "mean_aleatoric_variance"],
        ).to_string(index=False))
    if report.epistemic_sweep:
        columns = ["fraction", "train_examples", "mean_entropy", "entropy_variance"]
        print(VisualizationManager.format_results_table(report.epistemic_sweep, columns).to_string(index=False))
