"""Shared fixtures: small configurations keep the suite fast."""

import pytest

from models.data_models import (
    DatasetConfig,
    MetricsConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    VisualizationConfig,
)
from simulators.grid_vqa_simulator import GridVQASimulator


def make_run_config(mode: str = "P-GCA", epochs: int = 2, num_examples: int = 40, seed: int = 0) -> RunConfig:
    return RunConfig(
        dataset=DatasetConfig(
            grid_rows=3, grid_cols=3, feature_width=6, vocab_size=16, num_classes=4,
            question_templates=2, num_examples=num_examples, seed=seed, marker_kinds=2,
        ),
        model=ModelConfig(
            grid_rows=3, grid_cols=3, feature_width=6, hidden_size=8, vocab_size=16,
            max_question_length=4, num_classes=4,
        ),
        train=TrainConfig(
            mode=mode, mc_samples=3, eval_mc_samples=4, batch_size=10, epochs=epochs,
            dropout_rate=0.2, adam_lr=0.01, seed=seed,
        ),
        metrics=MetricsConfig(sweep_fractions=[0.5, 1.0]),
        visualization=VisualizationConfig(image_size=48, kernel_size=5, sigma=1.0),
    )


@pytest.fixture
def run_config() -> RunConfig:
    return make_run_config()


@pytest.fixture
def dataset(run_config):
    return GridVQASimulator(run_config.dataset).generate()
