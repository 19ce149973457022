"""
Data models for the uncertainty attention lab.

This module defines dataclasses for configuration sections, synthetic
examples, learnable parameters and every report the lab produces
(uncertainty estimates, loss bundles, step reports, metrics).
"""

from dataclasses import dataclass, field, asdict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from models.errors import ValidationError


# ----------------------------------------------------------------------------
# Training modes (ablation lattice)
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeSpec:
    """
    Which loss components and gradient paths a training mode enables.

    Attributes:
        uncertainty_kind: "aleatoric" or "predictive" variance feeding the distorted loss
        distorted: Whether the distorted loss L_p contributes to L_u
        variance_equalizer: Whether L_VE contributes to L_u
        distorted_gap: Whether L_UDL contributes to L_u
        inject_certainty: Whether the certainty gradient is injected at f_i
    """
    uncertainty_kind: str
    distorted: bool
    variance_equalizer: bool
    distorted_gap: bool
    inject_certainty: bool

    @property
    def uses_uncertainty(self) -> bool:
        return self.distorted or self.variance_equalizer or self.distorted_gap

    @property
    def enabled_components(self) -> Tuple[str, ...]:
        names = []
        if self.distorted:
            names.append("distorted")
        if self.variance_equalizer:
            names.append("variance_equalizer")
        if self.distorted_gap:
            names.append("distorted_gap")
        return tuple(names)


TRAINING_MODES: Dict[str, ModeSpec] = {
    "baseline": ModeSpec("aleatoric", False, False, False, False),
    "VE": ModeSpec("aleatoric", False, True, False, False),
    "UDL": ModeSpec("aleatoric", False, False, True, False),
    "AUL": ModeSpec("aleatoric", True, False, False, False),
    "PUL": ModeSpec("predictive", True, False, False, False),
    "UDL+VE": ModeSpec("aleatoric", False, True, True, False),
    "AUL+VE": ModeSpec("aleatoric", True, True, False, False),
    "PUL+VE": ModeSpec("predictive", True, True, False, False),
    "AUL+UDL": ModeSpec("aleatoric", True, False, True, False),
    "PUL+UDL": ModeSpec("predictive", True, False, True, False),
    "A-GCA": ModeSpec("aleatoric", True, True, True, True),
    "P-GCA": ModeSpec("predictive", True, True, True, True),
}

PARAM_GROUPS = ("image", "question", "attention", "trunk", "logit", "variance")


# ----------------------------------------------------------------------------
# Configuration sections
# ----------------------------------------------------------------------------

@dataclass
class DatasetConfig:
    """
    Settings for the synthetic grid question-answering generator.

    Attributes:
        grid_rows: Grid extent u
        grid_cols: Grid extent v
        feature_width: Cell feature width d (marker channels + attribute channels)
        vocab_size: Token vocabulary size V
        num_classes: Number of answer classes C
        question_templates: Number of question template tokens
        num_examples: Examples to generate n
        seed: Generator seed
        marker_kinds: Distinct marker channels; the question picks one
        attention_kind: "one_hot" or "blob" planted attention
        blob_sigma: Gaussian blob width in cells (blob attention only)
        feature_noise: Standard deviation of additive cell feature noise
        prototype_seed: Seed of the attribute prototype table shared by all datasets
    """
    grid_rows: int = 7
    grid_cols: int = 7
    feature_width: int = 8
    vocab_size: int = 32
    num_classes: int = 12
    question_templates: int = 4
    num_examples: int = 1000
    seed: int = 0
    marker_kinds: int = 2
    attention_kind: str = "one_hot"
    blob_sigma: float = 1.0
    feature_noise: float = 0.05
    prototype_seed: int = 0

    @property
    def reserved_tokens(self) -> int:
        """Padding token plus marker, row and column tokens."""
        return 1 + self.marker_kinds + self.grid_rows + self.grid_cols

    @property
    def attribute_width(self) -> int:
        return self.feature_width - self.marker_kinds

    def validate(self) -> List[str]:
        errors = []
        if self.grid_rows < 1 or self.grid_cols < 1:
            errors.append("grid_rows and grid_cols must be positive")
        if self.num_classes < 2:
            errors.append("num_classes must be at least 2")
        if self.num_examples < 1:
            errors.append("num_examples must be at least 1")
        if self.marker_kinds < 1:
            errors.append("marker_kinds must be at least 1")
        if self.grid_rows * self.grid_cols < self.marker_kinds:
            errors.append("grid must have at least one cell per marker kind")
        if self.attribute_width < 2:
            errors.append("feature_width must leave at least 2 attribute channels after the marker channels")
        if self.question_templates < 1:
            errors.append("question_templates must be at least 1")
        if self.question_templates > self.vocab_size - self.reserved_tokens:
            errors.append(
                f"question_templates ({self.question_templates}) exceeds vocab_size minus "
                f"reserved tokens ({self.vocab_size - self.reserved_tokens})"
            )
        if self.attention_kind not in ("one_hot", "blob"):
            errors.append("attention_kind must be 'one_hot' or 'blob'")
        if self.blob_sigma <= 0:
            errors.append("blob_sigma must be positive")
        if self.feature_noise < 0:
            errors.append("feature_noise must be nonnegative")
        return errors


@dataclass
class ModelConfig:
    """
    Architecture sizes of the toy attention classifier.

    Attributes:
        grid_rows: Grid extent u
        grid_cols: Grid extent v
        feature_width: Cell feature width d
        hidden_size: Embedding width h shared by both encoders
        vocab_size: Token vocabulary size V
        max_question_length: Longest accepted question L
        num_classes: Number of answer classes C
    """
    grid_rows: int = 7
    grid_cols: int = 7
    feature_width: int = 8
    hidden_size: int = 32
    vocab_size: int = 32
    max_question_length: int = 6
    num_classes: int = 12

    @property
    def num_cells(self) -> int:
        return self.grid_rows * self.grid_cols

    def validate(self) -> List[str]:
        errors = []
        for name in ("grid_rows", "grid_cols", "feature_width", "hidden_size",
                     "vocab_size", "max_question_length"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be positive")
        if self.num_classes < 2:
            errors.append("num_classes must be at least 2")
        return errors


@dataclass
class TrainConfig:
    """
    Settings for gradient-certainty attention training.

    Attributes:
        mode: One of TRAINING_MODES
        lambda_scale: Reversal scale applied to the product of gradients
        gamma: Multiplier of the negative region in the certainty activation
        alpha: Scale of the negative branch of the distorted gap loss
        eta: Weight of the uncertainty loss in the cost function
        sigma0_sq: Reference variance of the variance equalizer
        mc_samples: Noise samples T per training step
        eval_mc_samples: Monte-Carlo passes used by evaluation
        dropout_rate: Dropout probability in the classifier trunk
        adam_lr, adam_beta1, adam_beta2, adam_epsilon: Adam settings (classification groups)
        sgd_lr: Plain SGD rate (variance head)
        batch_size: Examples per step
        epochs: Passes over the training set
        seed: Seed for initialization, shuffling, dropout and noise draws
        noise_scaling: "std" scales noise by sqrt(variance), "variance" by the variance itself
        certainty_normalization: "softmax" or "sum" normalization of the certainty gradient
        validation_every: Epoch interval between validation cost evaluations
    """
    mode: str = "P-GCA"
    lambda_scale: float = 1.0
    gamma: float = -10.0
    alpha: float = 1.0
    eta: float = 0.5
    sigma0_sq: float = 1.0
    mc_samples: int = 10
    eval_mc_samples: int = 25
    dropout_rate: float = 0.2
    adam_lr: float = 0.005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    sgd_lr: float = 0.004
    batch_size: int = 50
    epochs: int = 30
    seed: int = 0
    noise_scaling: str = "std"
    certainty_normalization: str = "softmax"
    validation_every: int = 1

    @property
    def mode_spec(self) -> ModeSpec:
        return TRAINING_MODES[self.mode]

    def validate(self) -> List[str]:
        errors = []
        if self.mode not in TRAINING_MODES:
            errors.append(f"mode must be one of {', '.join(TRAINING_MODES)}")
        if self.lambda_scale < 0:
            errors.append("lambda_scale must be nonnegative")
        if self.alpha <= 0:
            errors.append("alpha must be positive")
        if self.eta < 0:
            errors.append("eta must be nonnegative")
        if self.sigma0_sq <= 0:
            errors.append("sigma0_sq must be positive")
        if self.mc_samples < 1 or self.eval_mc_samples < 1:
            errors.append("mc_samples and eval_mc_samples must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            errors.append("dropout_rate must lie in [0, 1)")
        if self.adam_lr <= 0 or self.sgd_lr <= 0:
            errors.append("adam_lr and sgd_lr must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            errors.append("adam_beta1 and adam_beta2 must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            errors.append("adam_epsilon must be positive")
        if self.batch_size < 1:
            errors.append("batch_size must be at least 1")
        if self.epochs < 0:
            errors.append("epochs must be nonnegative")
        if self.noise_scaling not in ("std", "variance"):
            errors.append("noise_scaling must be 'std' or 'variance'")
        if self.certainty_normalization not in ("softmax", "sum"):
            errors.append("certainty_normalization must be 'softmax' or 'sum'")
        if self.validation_every < 1:
            errors.append("validation_every must be at least 1")
        return errors


@dataclass
class MetricsConfig:
    """
    Options for evaluation metrics.

    Attributes:
        emd_method: "sinkhorn" or "exact_small"
        sinkhorn_epsilon: Entropic regularization strength
        sinkhorn_tolerance: Marginal violation at which Sinkhorn stops
        sinkhorn_max_iterations: Iteration cap for Sinkhorn
        sweep_fractions: Training fractions for the epistemic sweep
    """
    emd_method: str = "sinkhorn"
    sinkhorn_epsilon: float = 0.01
    sinkhorn_tolerance: float = 1e-7
    sinkhorn_max_iterations: int = 10000
    sweep_fractions: List[float] = field(default_factory=lambda: [0.5, 0.75, 1.0])

    def validate(self) -> List[str]:
        errors = []
        if self.emd_method not in ("sinkhorn", "exact_small"):
            errors.append("emd_method must be 'sinkhorn' or 'exact_small'")
        if self.sinkhorn_epsilon <= 0 or self.sinkhorn_tolerance <= 0:
            errors.append("sinkhorn_epsilon and sinkhorn_tolerance must be positive")
        if self.sinkhorn_max_iterations < 1:
            errors.append("sinkhorn_max_iterations must be at least 1")
        if not self.sweep_fractions:
            errors.append("sweep_fractions must not be empty")
        for fraction in self.sweep_fractions:
            if not 0.0 < fraction <= 1.0:
                errors.append(f"sweep fraction {fraction} must lie in (0, 1]")
        return errors


@dataclass
class VisualizationConfig:
    """
    Attention rendering settings.

    Attributes:
        image_size: Output side length in pixels
        kernel_size: Odd Gaussian kernel side length
        sigma: Per-axis Gaussian standard deviation in pixels
        gain: Overlay gain applied to the max-normalized map
    """
    image_size: int = 448
    kernel_size: int = 31
    sigma: float = 1.0
    gain: float = 1.0

    def validate(self) -> List[str]:
        errors = []
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            errors.append("kernel_size must be a positive odd integer")
        if self.image_size <= self.kernel_size:
            errors.append("image_size must exceed kernel_size")
        if self.sigma <= 0:
            errors.append("sigma must be positive")
        if self.gain < 0:
            errors.append("gain must be nonnegative")
        return errors


@dataclass
class RunConfig:
    """
    Effective configuration of one command invocation.

    Attributes:
        dataset: Generator settings
        model: Architecture sizes
        train: Training settings
        metrics: Metric options
        visualization: Rendering settings
        train_fraction, val_fraction, test_fraction: Split proportions
        noise_fraction: Label noise fraction injected into the training split
        data_dir: Directory holding dataset files
        out_dir: Directory receiving command outputs
    """
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    visualization: VisualizationConfig = field(default_factory=VisualizationConfig)
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    noise_fraction: float = 0.0
    data_dir: str = "data"
    out_dir: str = "runs"

    SECTIONS = ("dataset", "model", "train", "metrics", "visualization")

    def validate(self) -> List[str]:
        errors = []
        for section in self.SECTIONS:
            errors.extend(f"{section}: {e}" for e in getattr(self, section).validate())
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fractions):
            errors.append("train_fraction, val_fraction and test_fraction must all be positive")
        elif abs(sum(fractions) - 1.0) > 1e-9:
            errors.append("train_fraction + val_fraction + test_fraction must equal 1")
        if not 0.0 <= self.noise_fraction <= 1.0:
            errors.append("noise_fraction must lie in [0, 1]")
        for name in ("grid_rows", "grid_cols", "feature_width", "vocab_size", "num_classes"):
            if getattr(self.dataset, name) != getattr(self.model, name):
                errors.append(f"dataset.{name} and model.{name} disagree")
        if self.model.max_question_length < 4:
            errors.append("model.max_question_length must be at least 4 (generated questions have 4 tokens)")
        return errors

    def to_dict(self) -> Dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# Examples and datasets
# ----------------------------------------------------------------------------

@dataclass
class Example:
    """
    One synthetic grid question-answering record.

    Attributes:
        example_id: Stable identifier assigned at generation
        grid: Cell features, shape (u, v, d)
        question: Token ids
        answer: Answer class id
        gt_attention: Planted attention, shape (u, v), sums to 1
        noisy: Label-noise marker
    """
    example_id: str
    grid: np.ndarray
    question: List[int]
    answer: int
    gt_attention: np.ndarray
    noisy: bool = False


@dataclass
class Dataset:
    """An ordered, immutable-by-convention collection of examples."""
    config: DatasetConfig
    examples: List[Example]

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, index: int) -> Example:
        return self.examples[index]

    def subset(self, indices) -> "Dataset":
        return Dataset(config=self.config, examples=[self.examples[i] for i in indices])

    def find(self, example_id: str) -> Optional[Example]:
        return next((e for e in self.examples if e.example_id == example_id), None)


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------

@dataclass
class ModelParams:
    """
    All learnable parameters, grouped as the cost function groups them.

    Groups: image (θ_i), question (θ_q), attention (θ_f), trunk (θ_c),
    logit (θ_y), variance (θ_u).
    """
    groups: Dict[str, Dict[str, np.ndarray]]

    def flat(self) -> Dict[str, np.ndarray]:
        return {
            f"{group}.{name}": value
            for group in PARAM_GROUPS
            for name, value in sorted(self.groups[group].items())
        }

    @classmethod
    def from_flat(cls, flat: Dict[str, np.ndarray]) -> "ModelParams":
        groups: Dict[str, Dict[str, np.ndarray]] = {group: {} for group in PARAM_GROUPS}
        for key, value in flat.items():
            group, name = key.split(".", 1)
            groups[group][name] = value
        return cls(groups=groups)

    def copy(self) -> "ModelParams":
        return ModelParams(groups={
            group: {name: value.copy() for name, value in params.items()}
            for group, params in self.groups.items()
        })

    def group_of(self, key: str) -> str:
        return key.split(".", 1)[0]


# ----------------------------------------------------------------------------
# Uncertainty and losses
# ----------------------------------------------------------------------------

@dataclass
class UncertaintyEstimate:
    """
    Monte-Carlo uncertainty of one example.

    Attributes:
        aleatoric_variance: Per-class softplus variance averaged over passes (σ²_a)
        entropy: Entropy of mean_probs in nats (H)
        predictive: Predictive uncertainty σ²_p
        per_sample_variances: Per-pass per-class variances, shape (T, C)
        mean_probs: Average of per-pass softmax vectors
        per_sample_probs: Per-pass softmax vectors, shape (T, C)
        per_sample_logits: Per-pass logits, shape (T, C)
    """
    aleatoric_variance: np.ndarray
    entropy: float
    predictive: float
    per_sample_variances: np.ndarray
    mean_probs: np.ndarray
    per_sample_probs: Optional[np.ndarray] = None
    per_sample_logits: Optional[np.ndarray] = None

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.aleatoric_variance

    @property
    def samples(self) -> int:
        return int(self.per_sample_variances.shape[0])

    def to_dict(self) -> Dict:
        return {
            "aleatoric_variance": self.aleatoric_variance.tolist(),
            "entropy": float(self.entropy),
            "predictive": float(self.predictive),
            "per_sample_variances": self.per_sample_variances.tolist(),
            "mean_probs": self.mean_probs.tolist(),
        }

    @classmethod
    def from_dict(cls, record: Dict) -> "UncertaintyEstimate":
        return cls(
            aleatoric_variance=np.asarray(record["aleatoric_variance"], dtype=np.float64),
            entropy=float(record["entropy"]),
            predictive=float(record["predictive"]),
            per_sample_variances=np.asarray(record["per_sample_variances"], dtype=np.float64),
            mean_probs=np.asarray(record["mean_probs"], dtype=np.float64),
        )


@dataclass
class LossBundle:
    """
    Scalar losses of one step or evaluation.

    Attributes:
        classification: L_y
        distorted: Contribution of L_p to L_u (0 when the mode disables it)
        variance_equalizer: Contribution of L_VE (0 when disabled)
        distorted_gap: Contribution of L_UDL (0 when disabled)
        total_uncertainty: L_u, the sum of the three contributions
        mode: "aleatoric" or "predictive"
        variant: Training mode name
        enabled: Names of the components summed into L_u
        distorted_reference: L_p as computed, whether or not it contributes
    """
    classification: float
    distorted: float
    variance_equalizer: float
    distorted_gap: float
    total_uncertainty: float
    mode: str
    variant: str = ""
    enabled: Tuple[str, ...] = ()
    distorted_reference: float = 0.0

    def to_dict(self) -> Dict:
        record = asdict(self)
        record["enabled"] = list(self.enabled)
        return record


@dataclass
class StepReport:
    """
    Diagnostics of one training step.

    Attributes:
        epoch: Epoch index
        step: Global step index
        losses: Batch-mean loss bundle
        grad_norms: L2 norm of the applied gradient per parameter group
        certainty_grad: Batch mean of the certainty gradient at f_i (None without injection)
        accuracy: Batch accuracy
    """
    epoch: int
    step: int
    losses: LossBundle
    grad_norms: Dict[str, float]
    certainty_grad: Optional[List[float]]
    accuracy: float

    def to_dict(self) -> Dict:
        return {
            "epoch": self.epoch,
            "step": self.step,
            **self.losses.to_dict(),
            "grad_norms": dict(self.grad_norms),
            "certainty_grad": self.certainty_grad,
            "accuracy": self.accuracy,
        }


# ----------------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------------

@dataclass
class AttentionMap:
    """
    Attention probability over grid cells.

    Attributes:
        grid: Nonnegative weights, shape (u, v)
        normalized: Whether the weights sum to 1
    """
    grid: np.ndarray
    normalized: bool = True

    @classmethod
    def from_array(cls, values, normalize: bool = True) -> "AttentionMap":
        grid = np.asarray(values, dtype=np.float64)
        if normalize:
            total = grid.sum()
            if total > 0:
                grid = grid / total
        return cls(grid=grid, normalized=normalize and bool(grid.sum() > 0))

    @property
    def extents(self) -> Tuple[int, int]:
        return tuple(self.grid.shape)


@dataclass
class UncertaintyErrorReport:
    """
    Predictive uncertainty split by prediction correctness.

    Attributes:
        mean_predictive_correct: Mean σ²_p over correct predictions (None if none)
        mean_predictive_wrong: Mean σ²_p over wrong predictions (None if none)
        point_biserial: Correlation of σ²_p with the wrong-prediction indicator (None if undefined)
        mean_classification_error: Mean of log 1/(1 - p_miss) over finite values
        classification_errors: Per-example error (inf sentinel when p_miss = 1)
        num_correct: Correct predictions
        num_wrong: Wrong predictions
        num_infinite: Examples excluded for p_miss = 1
    """
    mean_predictive_correct: Optional[float]
    mean_predictive_wrong: Optional[float]
    point_biserial: Optional[float]
    mean_classification_error: Optional[float]
    classification_errors: List[float]
    num_correct: int
    num_wrong: int
    num_infinite: int

    def to_dict(self) -> Dict:
        record = asdict(self)
        record["classification_errors"] = [
            e if np.isfinite(e) else "inf" for e in self.classification_errors
        ]
        return record


@dataclass
class MetricsReport:
    """
    Evaluation summary.

    Attributes:
        accuracy: Mean VQA accuracy in [0, 1]
        rank_correlation: Mean rank correlation against the reference attention (None if undefined everywhere)
        emd: Mean EMD against the reference attention
        uncertainty_error: Uncertainty versus misclassification report
        subset_aleatoric: Mean σ²_a per noisy/clean subset, when requested
        epistemic_sweep: Per-fraction entropy statistics, when requested
        num_examples: Evaluated examples
    """
    accuracy: float
    rank_correlation: Optional[float]
    emd: float
    uncertainty_error: UncertaintyErrorReport
    subset_aleatoric: Optional[Dict[str, float]] = None
    epistemic_sweep: Optional[List[Dict]] = None
    num_examples: int = 0

    def to_dict(self) -> Dict:
        return {
            "accuracy": self.accuracy,
            "rank_correlation": self.rank_correlation,
            "emd": self.emd,
            "uncertainty_error": self.uncertainty_error.to_dict(),
            "subset_aleatoric": self.subset_aleatoric,
            "epistemic_sweep": self.epistemic_sweep,
            "num_examples": self.num_examples,
        }


@dataclass
class RasterImage:
    """
    8-bit raster image.

    Attributes:
        width: Columns
        height: Rows
        channels: 1 (gray) or 3 (RGB)
        samples: uint8 array of shape (height, width, channels)
    """
    width: int
    height: int
    channels: int
    samples: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValidationError("channels must be 1 or 3")
        if self.samples.shape != (self.height, self.width, self.channels):
            raise ValidationError(
                f"sample array shape {self.samples.shape} does not match "
                f"{(self.height, self.width, self.channels)}"
            )
        self.samples = self.samples.astype(np.uint8, copy=False)
