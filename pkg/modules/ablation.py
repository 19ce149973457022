"""
Ablation Module for the uncertainty attention lab.

This module provides the workflow behind the ``ablate`` command: train
every requested mode for every seed on the same split and compare
validation accuracy, attention quality and aleatoric variance.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import echo_effective_config
from models.data_models import Dataset, RunConfig, TRAINING_MODES
from models.errors import ValidationError
from services.gca_trainer import train
from services.metrics_service import evaluate_model
from services.storage_service import check_dataset_compatible, load_dataset
from services.visualization_manager import VisualizationManager

logger = logging.getLogger(__name__)

ABLATION_NAME = "ablation.csv"
REPORT_NAME = "ablation_report.html"
COLUMNS = [
    "mode", "seed", "accuracy", "rank_correlation", "emd",
    "mean_aleatoric_variance", "mean_predictive_correct", "mean_predictive_wrong",
]


def run_ablation_module(config: RunConfig, train_path: Union[str, Path], val_path: Union[str, Path],
                        out_dir: Union[str, Path], modes: Optional[Sequence[str]] = None,
                        seeds: Optional[Sequence[int]] = None, html_report: bool = False) -> pd.DataFrame:
    """
    Runs the mode-by-seed ablation grid.

    Args:
        config: Validated run configuration (train.mode and train.seed are replaced per run)
        train_path: Training split
        val_path: Validation split used for every metric
        out_dir: Output directory
        modes: Training modes (defaults to every mode)
        seeds: Training seeds (defaults to train.seed)
        html_report: Also write grouped bars as HTML

    Returns:
        One row per (mode, seed)
    """
    modes = list(modes) if modes else list(TRAINING_MODES)
    unknown = [m for m in modes if m not in TRAINING_MODES]
    if unknown:
        raise ValidationError(f"unknown mode(s) {', '.join(unknown)}; choose from {', '.join(TRAINING_MODES)}")
    seeds = list(seeds) if seeds else [config.train.seed]
    train_set = load_dataset(train_path)
    validation = load_dataset(val_path)
    check_dataset_compatible(train_set, config.model)
    check_dataset_compatible(validation, config.model)

    out_dir = Path(out_dir)
    echo_effective_config(config, out_dir)
    table = _run_ablation_workflow(train_set, validation, config, modes, seeds)
    table.to_csv(out_dir / ABLATION_NAME, index=False, float_format="%.10g")
    if html_report:
        VisualizationManager.write_html_report(
            {"ablation": VisualizationManager.create_ablation_chart(table)}, out_dir / REPORT_NAME, "Ablation",
        )
    _display_ablation_results(table)
    return table


def _run_ablation_workflow(train_set: Dataset, validation: Dataset, config: RunConfig, modes: List[str],
                           seeds: List[int]) -> pd.DataFrame:
    rows: List[Dict] = []
    for mode in modes:
        for seed in seeds:
            run_config = replace(config, train=replace(config.train, mode=mode, seed=seed))
            result = train(train_set, run_config, validation=validation)
            report, estimates, _, _ = evaluate_model(validation, result.best_params, run_config)
            errors = report.uncertainty_error
            rows.append({
                "mode": mode,
                "seed": seed,
                "accuracy": report.accuracy,
                "rank_correlation": report.rank_correlation,
                "emd": report.emd,
                "mean_aleatoric_variance": float(np.mean([np.mean(e.aleatoric_variance) for e in estimates])),
                "mean_predictive_correct": errors.mean_predictive_correct,
                "mean_predictive_wrong": errors.mean_predictive_wrong,
            })
            logger.info("✓ %s seed %d: accuracy %.4f", mode, seed, report.accuracy)
    return pd.DataFrame(rows, columns=COLUMNS).astype({name: float for name in COLUMNS[2:]})


def _display_ablation_results(table: pd.DataFrame):
    summary = table.groupby("mode", sort=False)[
        ["accuracy", "rank_correlation", "emd", "mean_aleatoric_variance"]
    ].mean().reset_index()
    records = [
        {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in row.items()}
        for row in summary.to_dict("records")
    ]
    print(VisualizationManager.format_results_table(records, list(summary.columns)).to_string(index=False))
