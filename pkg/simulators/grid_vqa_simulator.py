"""Grid VQA Simulator for generating question-answering examples with planted attention."""

import logging
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.data_models import Dataset, DatasetConfig, Example
from models.errors import ValidationError
from services.autodiff import RngStream

logger = logging.getLogger(__name__)


class GridVQASimulator:
    """
    Generates grid images, token questions and answers.

    Every cell carries an attribute pattern (a noisy class prototype) in its
    attribute channels. One cell per marker kind is additionally lit in that
    marker's channel. A question names a marker kind plus the row and column
    of the marked cell; the answer is the attribute class of that cell and
    the planted attention sits on it.

    Token layout: 0 is padding, then one token per marker kind, one per row,
    one per column, then the question templates.
    """

    # Philox stream keys
    GENERATION_STREAM = 0
    PROTOTYPE_STREAM = 10
    NOISE_STREAM = 11
    SPLIT_STREAM = 12

    # Attribute prototypes
    PROTOTYPE_NORM = 1.5
    PROTOTYPE_MIN_DISTANCE = 1.0
    PROTOTYPE_MAX_ATTEMPTS = 10000

    # Marker channel intensity
    MARKER_VALUE = 1.0

    QUESTION_LENGTH = 4

    def __init__(self, config: DatasetConfig):
        errors = config.validate()
        if errors:
            raise ValidationError("; ".join(errors))
        self.config = config
        self.prototypes = self._build_prototypes()

    # ------------------------------------------------------------------
    # Token layout
    # ------------------------------------------------------------------

    def marker_token(self, marker: int) -> int:
        return 1 + marker

    def row_token(self, row: int) -> int:
        return 1 + self.config.marker_kinds + row

    def col_token(self, col: int) -> int:
        return 1 + self.config.marker_kinds + self.config.grid_rows + col

    def template_token(self, template: int) -> int:
        return self.config.reserved_tokens + template

    def _build_prototypes(self) -> np.ndarray:
        """Well-separated attribute prototypes, one per class, from the prototype seed."""
        rng = RngStream(self.config.prototype_seed, self.PROTOTYPE_STREAM)
        width = self.config.attribute_width
        accepted: List[np.ndarray] = []
        for _ in range(self.PROTOTYPE_MAX_ATTEMPTS):
            candidate = rng.normal((width,))
            candidate = self.PROTOTYPE_NORM * candidate / np.linalg.norm(candidate)
            if all(np.linalg.norm(candidate - p) >= self.PROTOTYPE_MIN_DISTANCE for p in accepted):
                accepted.append(candidate)
                if len(accepted) == self.config.num_classes:
                    return np.stack(accepted)
        raise ValidationError(
            f"cannot place {self.config.num_classes} separated prototypes in "
            f"{width} attribute channels; increase feature_width"
        )

    # ------------------------------------------------------------------
    # Generation
    # ------------------------------------------------------------------

    def _planted_attention(self, row: int, col: int) -> np.ndarray:
        cfg = self.config
        if cfg.attention_kind == "one_hot":
            attention = np.zeros((cfg.grid_rows, cfg.grid_cols))
            attention[row, col] = 1.0
            return attention
        r, c = np.meshgrid(np.arange(cfg.grid_rows), np.arange(cfg.grid_cols), indexing="ij")
        blob = np.exp(-((r - row) ** 2 + (c - col) ** 2) / (2.0 * cfg.blob_sigma ** 2))
        return blob / blob.sum()

    def generate(self, seed: Optional[int] = None) -> Dataset:
        """
        Generates a dataset.

        Args:
            seed: Generation seed (defaults to the config seed)

        Returns:
            Dataset of config.num_examples examples with ids "ex-000000", ...
        """
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        rng = RngStream(seed, self.GENERATION_STREAM)
        cells = cfg.grid_rows * cfg.grid_cols
        examples = []

        for index in range(cfg.num_examples):
            classes = rng.integers(0, cfg.num_classes, size=cells)
            marked = rng.permutation(cells)[:cfg.marker_kinds]
            marker = int(rng.integers(0, cfg.marker_kinds))
            template = int(rng.integers(0, cfg.question_templates))
            noise = rng.normal((cells, cfg.feature_width), 0.0, cfg.feature_noise)

            features = np.zeros((cells, cfg.feature_width))
            features[:, cfg.marker_kinds:] = self.prototypes[classes]
            for kind, cell in enumerate(marked):
                features[cell, kind] = self.MARKER_VALUE
            features += noise

            target = int(marked[marker])
            row, col = divmod(target, cfg.grid_cols)
            examples.append(Example(
                example_id=f"ex-{index:06d}",
                grid=features.reshape(cfg.grid_rows, cfg.grid_cols, cfg.feature_width),
                question=[
                    self.template_token(template),
                    self.marker_token(marker),
                    self.row_token(row),
                    self.col_token(col),
                ],
                answer=int(classes[target]),
                gt_attention=self._planted_attention(row, col),
                noisy=False,
            ))

        logger.info("Generated %d examples (seed %d)", len(examples), seed)
        return Dataset(config=cfg, examples=examples)

    def oracle_answer(self, example: Example) -> int:
        """Nearest prototype to the attribute channels of the cell the question names."""
        cfg = self.config
        row = example.question[2] - self.row_token(0)
        col = example.question[3] - self.col_token(0)
        attributes = example.grid[row, col, cfg.marker_kinds:]
        return int(np.argmin(np.linalg.norm(self.prototypes - attributes, axis=1)))

    # ------------------------------------------------------------------
    # Label noise and splits
    # ------------------------------------------------------------------

    def inject_label_noise(self, dataset: Dataset, fraction: float, rng: Optional[RngStream] = None) -> Dataset:
        """
        Relabels a seeded-shuffle prefix of the examples to a uniformly chosen wrong class.

        Args:
            dataset: Source dataset (not modified)
            fraction: Share of examples to relabel, in [0, 1]
            rng: Selection stream (defaults to the config seed's noise stream)

        Returns:
            New dataset with relabeled examples flagged noisy
        """
        if not 0.0 <= fraction <= 1.0:
            raise ValidationError(f"noise_fraction must lie in [0, 1], got {fraction}")
        rng = rng if rng is not None else RngStream(self.config.seed, self.NOISE_STREAM)
        count = int(round(fraction * len(dataset)))
        chosen = sorted(int(i) for i in rng.permutation(len(dataset))[:count])
        examples = list(dataset.examples)
        classes = self.config.num_classes
        for index in chosen:
            example = examples[index]
            shift = 1 + int(rng.integers(0, classes - 1))
            examples[index] = replace(example, answer=(example.answer + shift) % classes, noisy=True)
        if count:
            logger.info("Relabeled %d of %d examples", count, len(dataset))
        return Dataset(config=dataset.config, examples=examples)

    def split(self, dataset: Dataset, fractions: Sequence[float], seed: Optional[int] = None) -> Tuple[Dataset, Dataset, Dataset]:
        """
        Seeded shuffle followed by a contiguous train/val/test partition.

        Args:
            dataset: Dataset to partition
            fractions: (train, val, test), all positive, summing to 1
            seed: Shuffle seed (defaults to the config seed)

        Returns:
            Tuple of (train, val, test) datasets
        """
        if len(fractions) != 3:
            raise ValidationError("split needs exactly three fractions")
        if any(f <= 0 for f in fractions):
            raise ValidationError("split fractions must all be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValidationError(f"split fractions sum to {sum(fractions)}, not 1")
        seed = self.config.seed if seed is None else seed
        order = RngStream(seed, self.SPLIT_STREAM).permutation(len(dataset))
        n_train = int(round(fractions[0] * len(dataset)))
        n_val = int(round(fractions[1] * len(dataset)))
        parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
        for name, part in zip(("train", "val", "test"), parts):
            if len(part) == 0:
                logger.warning("⚠️ The %s split is empty", name)
        return tuple(dataset.subset(int(i) for i in part) for part in parts)
