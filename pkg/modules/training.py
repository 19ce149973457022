"""
Training Module for the uncertainty attention lab.

This module provides the workflow behind the ``train`` command: load the
training (and optional validation) split, run gradient-certainty attention
training in the configured mode and write checkpoints, the step history and
the per-epoch loss summary.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from config import echo_effective_config
from models.data_models import Dataset, RunConfig, StepReport
from services.gca_trainer import TrainingResult, summarize_epochs, train
from services.storage_service import (
    check_dataset_compatible,
    load_dataset,
    save_checkpoint,
    write_history,
)
from services.visualization_manager import VisualizationManager

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.json"
BEST_CHECKPOINT_NAME = "best_checkpoint.json"
HISTORY_NAME = "history.jsonl"
EPOCH_SUMMARY_NAME = "epoch_summary.csv"
REPORT_NAME = "training_report.html"


def run_training_module(config: RunConfig, train_path: Union[str, Path], out_dir: Union[str, Path],
                        val_path: Optional[Union[str, Path]] = None, html_report: bool = False) -> Dict[str, Path]:
    """
    Trains one model and writes its artifacts.

    Args:
        config: Validated run configuration (train.mode selects the ablation variant)
        train_path: Training split (JSON-lines)
        out_dir: Output directory
        val_path: Optional validation split used for the best checkpoint
        html_report: Also write training curves as HTML

    Returns:
        Mapping of artifact name to written file
    """
    train_set = load_dataset(train_path)
    check_dataset_compatible(train_set, config.model)
    validation = None
    if val_path is not None:
        validation = load_dataset(val_path)
        check_dataset_compatible(validation, config.model)

    out_dir = Path(out_dir)
    echo_effective_config(config, out_dir)
    result = _run_training_workflow(train_set, validation, config, out_dir)
    paths = _write_training_artifacts(result, config, out_dir, html_report)
    _display_training_results(result, paths)
    return paths


def _run_training_workflow(train_set: Dataset, validation: Optional[Dataset], config: RunConfig,
                           out_dir: Path) -> TrainingResult:
    """
    Executes the training workflow. A failing step leaves the partial
    history in history.jsonl before the error propagates.
    """
    def _keep_partial_history(history: List[StepReport]):
        write_history(history, out_dir / HISTORY_NAME)
        logger.error("❌ Training failed; %d completed steps written to %s", len(history), out_dir / HISTORY_NAME)

    result = train(train_set, config, validation=validation, on_abort=_keep_partial_history)
    logger.info("✓ Trained %s for %d steps", config.train.mode, len(result.history))
    return result


def _write_training_artifacts(result: TrainingResult, config: RunConfig, out_dir: Path,
                              html_report: bool) -> Dict[str, Path]:
    meta = {
        "mode": config.train.mode,
        "seed": config.train.seed,
        "epochs": config.train.epochs,
        "steps": len(result.history),
    }
    paths = {
        "checkpoint": out_dir / CHECKPOINT_NAME,
        "best_checkpoint": out_dir / BEST_CHECKPOINT_NAME,
        "history": out_dir / HISTORY_NAME,
        "epoch_summary": out_dir / EPOCH_SUMMARY_NAME,
    }
    save_checkpoint(result.params, config.model, paths["checkpoint"], meta)
    save_checkpoint(
        result.best_params, config.model, paths["best_checkpoint"],
        {**meta, "best_epoch": result.best_epoch, "validation_costs": result.validation_costs},
    )
    write_history(result.history, paths["history"])

    summary = summarize_epochs(result.history)
    summary.to_csv(paths["epoch_summary"], float_format="%.10g")

    if html_report:
        figure = VisualizationManager.create_training_curves(summary)
        paths["report"] = VisualizationManager.write_html_report(
            {"training-curves": figure}, out_dir / REPORT_NAME, f"Training: {config.train.mode}",
        )
    return paths


def _display_training_results(result: TrainingResult, paths: Dict[str, Path]):
    if not result.history:
        logger.warning("⚠️ No training steps were run (epochs = 0)")
        return
    last = result.history[-1]
    rows = [{
        "epoch": last.epoch,
        "steps": len(result.history),
        "classification": last.losses.classification,
        "total_uncertainty": last.losses.total_uncertainty,
        "train_accuracy": last.accuracy,
        "best_epoch": result.best_epoch,
    }]
    columns = ["epoch", "steps", "classification", "total_uncertainty", "train_accuracy", "best_epoch"]
    print(VisualizationManager.format_results_table(rows, columns).to_string(index=False))
    for name, path in paths.items():
        print(f"{name}: {path}")
