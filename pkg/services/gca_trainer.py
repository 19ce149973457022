"""
Gradient-certainty attention training.

One training step taps the gradients of the classification loss L_y and of
the uncertainty loss L_u at the attended feature f_i, turns their product
into a certainty gradient, adds it residually to ∂L_y/∂f_i and injects the
result at f_i so that the attention network and the encoders learn from
it. The classifier trunk and logit head follow ∂(L_y + η L_u), the variance
head follows ∂L_u with plain SGD.

Modes without certainty injection train on the ordinary gradient of the
cost; the baseline trains on L_y alone with the variance head frozen.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax as scipy_softmax

from models.data_models import (
    Dataset,
    LossBundle,
    ModelConfig,
    ModelParams,
    PARAM_GROUPS,
    RunConfig,
    StepReport,
    TrainConfig,
)
from models.errors import NumericalFaultError, ShapeError, ValidationError
from services import autodiff as ad
from services.attention_model import Batch, ForwardTrace, forward, init_params, make_batch
from services.autodiff import RngStream, Tape, Tensor
from services.optimizers import OptimizerHyper, OptimizerState, optimizer_step
from services.uncertainty_service import (
    LossTerm,
    aleatoric_variance,
    distorted_loss,
    total_uncertainty_loss,
    uncertainty_distorted_loss,
    variance_equalizer_loss,
)

logger = logging.getLogger(__name__)

# Philox stream keys per purpose, so that changing one kind of draw never
# shifts another.
INIT_STREAM = 0
DROPOUT_STREAM = 1
NOISE_STREAM = 2
SHUFFLE_STREAM = 3
VALIDATION_STREAM = 4

ADAM_GROUPS = ("image", "question", "attention", "trunk", "logit")
INJECTED_GROUPS = ("image", "question", "attention")


@dataclass
class StepStreams:
    """Random streams consumed by training steps."""
    dropout: RngStream
    noise: RngStream

    @classmethod
    def from_seed(cls, seed: int) -> "StepStreams":
        return cls(dropout=RngStream(seed, DROPOUT_STREAM), noise=RngStream(seed, NOISE_STREAM))


# ----------------------------------------------------------------------------
# Gradient rules
# ----------------------------------------------------------------------------

def classification_loss(logits: Tensor, target) -> Tensor:
    """Cross-entropy -log softmax(logits)[target]; per example for batched logits."""
    return -ad.pick(ad.log_softmax(logits, axis=-1), target)


def certainty_gradient(grad_y: np.ndarray, grad_u: np.ndarray, lambda_scale: float, gamma: float,
                       normalization: str = "softmax") -> np.ndarray:
    """
    Certainty gradient from the two loss gradients at the same node.

    ∇' = -λ (grad_u ⊙ grad_y); ∇'' = relu(∇') + γ relu(-∇'); the result is
    ∇'' normalized over all of its coordinates, by softmax (default) or by
    the coordinate sum.
    """
    grad_y = np.asarray(grad_y, dtype=np.float64)
    grad_u = np.asarray(grad_u, dtype=np.float64)
    if grad_y.shape != grad_u.shape:
        raise ShapeError(f"gradient shapes differ: {grad_y.shape} vs {grad_u.shape}")
    reversed_product = -lambda_scale * (grad_u * grad_y)
    gated = np.maximum(reversed_product, 0.0) + gamma * np.maximum(-reversed_product, 0.0)
    flat = gated.reshape(-1)
    if normalization == "softmax":
        normalized = scipy_softmax(flat)
    elif normalization == "sum":
        total = flat.sum()
        if total == 0.0:
            raise NumericalFaultError("sum-normalized certainty gradient is undefined: coordinates sum to 0")
        normalized = flat / total
    else:
        raise ValidationError(f"unknown certainty normalization '{normalization}'")
    return normalized.reshape(grad_y.shape)


def combined_attention_gradient(grad_y: np.ndarray, certainty: np.ndarray) -> np.ndarray:
    """Residual sum grad_y + certainty."""
    grad_y = np.asarray(grad_y, dtype=np.float64)
    certainty = np.asarray(certainty, dtype=np.float64)
    if grad_y.shape != certainty.shape:
        raise ShapeError(f"gradient shapes differ: {grad_y.shape} vs {certainty.shape}")
    return grad_y + certainty


# ----------------------------------------------------------------------------
# Losses of one forward pass
# ----------------------------------------------------------------------------

@dataclass
class StepLosses:
    """Loss tensors of one forward pass."""
    classification: Tensor
    uncertainty: Optional[Tensor]
    bundle: LossBundle


def compute_losses(trace: ForwardTrace, batch: Batch, config: TrainConfig, noise_rng: RngStream,
                   reduce: Callable[[Tensor], Tensor] = ad.mean) -> StepLosses:
    """
    L_y and the mode's L_u for a traced batch.

    ``reduce`` turns per-example losses into a scalar (batch mean by default).
    """
    spec = config.mode_spec
    kind = spec.uncertainty_kind
    per_example_y = classification_loss(trace.logits, batch.answers)
    loss_y = reduce(per_example_y)
    if not spec.uses_uncertainty:
        bundle = LossBundle(
            classification=loss_y.item(), distorted=0.0, variance_equalizer=0.0, distorted_gap=0.0,
            total_uncertainty=0.0, mode=kind, variant=config.mode, enabled=(),
        )
        return StepLosses(classification=loss_y, uncertainty=None, bundle=bundle)

    components: Dict[str, LossTerm] = {}
    reference = 0.0
    if spec.distorted or spec.distorted_gap:
        per_example_p = distorted_loss(
            trace.logits, trace.raw_variance, batch.answers, noise_rng, config.mc_samples,
            mode=kind, scaling=config.noise_scaling,
        )
        loss_p = reduce(per_example_p)
        reference = loss_p.item()
        if spec.distorted:
            components["distorted"] = LossTerm(loss_p, kind)
        if spec.distorted_gap:
            gap = uncertainty_distorted_loss(per_example_p, per_example_y, config.alpha)
            components["distorted_gap"] = LossTerm(reduce(gap), kind)
    if spec.variance_equalizer:
        equalizer = variance_equalizer_loss(aleatoric_variance(trace.raw_variance), config.sigma0_sq)
        components["variance_equalizer"] = LossTerm(reduce(equalizer), kind)

    loss_u, bundle = total_uncertainty_loss(
        components, kind, classification=loss_y.item(), variant=config.mode, distorted_reference=reference,
    )
    return StepLosses(classification=loss_y, uncertainty=loss_u, bundle=bundle)


def _check_losses(bundle: LossBundle, epoch: int, step: int):
    values = {
        "classification": bundle.classification,
        "distorted": bundle.distorted,
        "variance_equalizer": bundle.variance_equalizer,
        "distorted_gap": bundle.distorted_gap,
    }
    bad = {name: value for name, value in values.items() if not math.isfinite(value)}
    if bad:
        raise NumericalFaultError(f"non-finite loss at epoch {epoch}, step {step}: {bad}")


# ----------------------------------------------------------------------------
# Training step
# ----------------------------------------------------------------------------

def train_step(batch: Batch, params: ModelParams, states: Dict[str, OptimizerState], config: TrainConfig,
               model_config: ModelConfig, streams: StepStreams, epoch: int = 0,
               step: int = 0) -> Tuple[ModelParams, Dict[str, OptimizerState], StepReport]:
    """
    One parameter update on ``batch``.

    Args:
        batch: Nonempty batch
        params: Current parameters (not modified)
        states: Optimizer states keyed "adam" and "sgd" (missing on the first step)
        config: Training settings; ``config.mode`` selects the gradient paths
        model_config: Architecture sizes
        streams: Dropout and noise streams
        epoch, step: Position recorded in the report

    Returns:
        Tuple of (updated params, updated states, StepReport)
    """
    if len(batch) == 0:
        raise ValidationError("batch must contain at least one example")
    spec = config.mode_spec

    with Tape():
        trace = forward(batch, params, model_config, streams.dropout, training=True,
                        dropout_rate=config.dropout_rate)
        losses = compute_losses(trace, batch, config, streams.noise)
    _check_losses(losses.bundle, epoch, step)

    leaves = dict(trace.leaf_items())
    store_y = ad.backward(losses.classification)
    store_u = ad.backward(losses.uncertainty) if losses.uncertainty is not None else None

    certainty = None
    store_injected = None
    if spec.inject_certainty:
        grad_y_f = store_y.get_or_zeros(trace.f_i)
        grad_u_f = store_u.get_or_zeros(trace.f_i)
        certainty = certainty_gradient(
            grad_y_f, grad_u_f, config.lambda_scale, config.gamma, config.certainty_normalization,
        )
        store_injected = ad.backward_from(trace.f_i, combined_attention_gradient(grad_y_f, certainty))

    grads: Dict[str, np.ndarray] = {}
    for key, leaf in leaves.items():
        group = params.group_of(key)
        if group == "variance":
            if store_u is not None:
                grads[key] = store_u.get_or_zeros(leaf)
        elif store_injected is not None and group in INJECTED_GROUPS:
            grads[key] = store_injected.get_or_zeros(leaf)
        elif store_u is not None:
            grads[key] = store_y.get_or_zeros(leaf) + config.eta * store_u.get_or_zeros(leaf)
        else:
            grads[key] = store_y.get_or_zeros(leaf)

    flat = params.flat()
    adam_keys = [key for key in flat if params.group_of(key) in ADAM_GROUPS]
    adam_params, adam_state = optimizer_step(
        "adam",
        {key: flat[key] for key in adam_keys},
        {key: grads[key] for key in adam_keys},
        states.get("adam"),
        OptimizerHyper(lr=config.adam_lr, beta1=config.adam_beta1, beta2=config.adam_beta2,
                       epsilon=config.adam_epsilon),
    )
    new_flat = dict(flat)
    new_flat.update(adam_params)
    new_states = dict(states)
    new_states["adam"] = adam_state
    if store_u is not None:
        variance_keys = [key for key in flat if params.group_of(key) == "variance"]
        sgd_params, sgd_state = optimizer_step(
            "sgd",
            {key: flat[key] for key in variance_keys},
            {key: grads[key] for key in variance_keys},
            states.get("sgd"),
            OptimizerHyper(lr=config.sgd_lr),
        )
        new_flat.update(sgd_params)
        new_states["sgd"] = sgd_state

    grad_norms = {}
    for group in PARAM_GROUPS:
        squares = [float(np.sum(grads[key] ** 2)) for key in grads if params.group_of(key) == group]
        grad_norms[group] = math.sqrt(sum(squares)) if squares else 0.0

    predictions = np.argmax(trace.logits.values, axis=1)
    report = StepReport(
        epoch=epoch,
        step=step,
        losses=losses.bundle,
        grad_norms=grad_norms,
        certainty_grad=certainty.mean(axis=0).tolist() if certainty is not None else None,
        accuracy=float(np.mean(predictions == batch.answers)),
    )
    logger.debug(
        "step %d: L_y=%.5f L_u=%.5f acc=%.3f", step, losses.bundle.classification,
        losses.bundle.total_uncertainty, report.accuracy,
    )
    return ModelParams.from_flat(new_flat), new_states, report


def cost(batch: Batch, params: ModelParams, config: TrainConfig, model_config: ModelConfig,
         noise_rng: RngStream) -> float:
    """(1/n) Σ_j [L_y^j + η L_u^j] with dropout off."""
    if len(batch) == 0:
        raise ValidationError("batch must contain at least one example")
    trace = forward(batch, params, model_config, None, training=False, dropout_rate=0.0)
    losses = compute_losses(trace, batch, config, noise_rng)
    return losses.bundle.classification + config.eta * losses.bundle.total_uncertainty


# ----------------------------------------------------------------------------
# Certainty maps over attention weights
# ----------------------------------------------------------------------------

def certainty_attention_maps(batch: Batch, params: ModelParams, config: TrainConfig,
                             model_config: ModelConfig, streams: StepStreams,
                             training: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-example certainty maps over grid cells.

    The certainty rule is applied, example by example, to the gradients of
    the summed L_y and L_u taken at the attention weights. Modes without an
    uncertainty loss use the distorted loss of their uncertainty kind.

    Returns:
        Tuple of (certainty maps (B, u, v), attention maps (B, u, v))
    """
    map_config = config
    if not config.mode_spec.uses_uncertainty:
        map_config = replace(config, mode="AUL")
    with Tape():
        trace = forward(batch, params, model_config, streams.dropout, training=training,
                        dropout_rate=config.dropout_rate)
        losses = compute_losses(trace, batch, map_config, streams.noise, reduce=ad.sum)
    grad_y = ad.backward(losses.classification).get_or_zeros(trace.attention_weights)
    grad_u = ad.backward(losses.uncertainty).get_or_zeros(trace.attention_weights)
    rows = [
        certainty_gradient(grad_y[i], grad_u[i], config.lambda_scale, config.gamma,
                           config.certainty_normalization)
        for i in range(len(batch))
    ]
    shape = (len(batch), model_config.grid_rows, model_config.grid_cols)
    return np.stack(rows).reshape(shape), trace.attention


# ----------------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------------

@dataclass
class TrainingResult:
    """
    Outcome of a training run.

    Attributes:
        params: Final parameters
        history: One StepReport per step
        best_params: Parameters with the lowest validation cost (final params without validation)
        best_epoch: Epoch of best_params (0 before any step)
        validation_costs: {"epoch", "cost"} records
        initial_params: Parameters before the first step
    """
    params: ModelParams
    history: List[StepReport]
    best_params: ModelParams
    best_epoch: int
    validation_costs: List[Dict] = field(default_factory=list)
    initial_params: Optional[ModelParams] = None


def _batches(dataset: Dataset, batch_size: int, order: np.ndarray):
    for start in range(0, len(order), batch_size):
        yield [dataset[int(i)] for i in order[start:start + batch_size]]


def train(dataset: Dataset, config: RunConfig, validation: Optional[Dataset] = None,
          on_abort: Optional[Callable[[List[StepReport]], None]] = None) -> TrainingResult:
    """
    Epoch loop with seeded shuffling and periodic validation cost.

    Args:
        dataset: Training examples
        config: Effective run configuration
        validation: Held-out examples for the validation cost and best checkpoint
        on_abort: Receives the partial history when a step fails, before the error propagates

    Returns:
        TrainingResult
    """
    if len(dataset) == 0:
        raise ValidationError("training set is empty")
    errors = config.validate()
    if errors:
        raise ValidationError("; ".join(errors))
    train_config, model_config = config.train, config.model
    seed = train_config.seed

    params = init_params(model_config, RngStream(seed, INIT_STREAM))
    initial = params.copy()
    streams = StepStreams.from_seed(seed)
    shuffle_rng = RngStream(seed, SHUFFLE_STREAM)
    validation_batch = make_batch(validation.examples, model_config) if validation is not None and len(validation) else None

    history: List[StepReport] = []
    states: Dict[str, OptimizerState] = {}
    best_params, best_epoch, best_cost = params.copy(), 0, math.inf
    validation_costs: List[Dict] = []
    step = 0
    logger.info(
        "Training mode %s on %d examples for %d epochs (batch %d, seed %d)",
        train_config.mode, len(dataset), train_config.epochs, train_config.batch_size, seed,
    )
    try:
        for epoch in range(1, train_config.epochs + 1):
            order = shuffle_rng.permutation(len(dataset))
            epoch_reports = []
            for examples in _batches(dataset, train_config.batch_size, order):
                batch = make_batch(examples, model_config)
                params, states, report = train_step(
                    batch, params, states, train_config, model_config, streams, epoch=epoch, step=step,
                )
                history.append(report)
                epoch_reports.append(report)
                step += 1

            mean_loss = float(np.mean([r.losses.classification for r in epoch_reports]))
            mean_accuracy = float(np.mean([r.accuracy for r in epoch_reports]))
            message = f"epoch {epoch}: L_y={mean_loss:.4f} train_acc={mean_accuracy:.3f}"
            if validation_batch is not None and epoch % train_config.validation_every == 0:
                value = cost(validation_batch, params, train_config, model_config,
                             RngStream(seed, VALIDATION_STREAM))
                validation_costs.append({"epoch": epoch, "cost": value})
                message += f" val_cost={value:.4f}"
                if value < best_cost:
                    best_cost, best_epoch, best_params = value, epoch, params.copy()
            logger.info(message)
    except Exception:
        logger.error("Training aborted after %d steps", len(history))
        if on_abort is not None:
            on_abort(history)
        raise

    if validation_batch is None or not validation_costs:
        best_params, best_epoch = params.copy(), train_config.epochs
    return TrainingResult(
        params=params,
        history=history,
        best_params=best_params,
        best_epoch=best_epoch,
        validation_costs=validation_costs,
        initial_params=initial,
    )


def summarize_epochs(history: List[StepReport]) -> pd.DataFrame:
    """
    Per-epoch spread of the distorted loss and the distorted gap across batches.

    Returns:
        DataFrame indexed by epoch with min/max/mean/std columns per quantity
    """
    columns = ["epoch", "classification", "distorted_reference", "distorted_gap", "accuracy"]
    if not history:
        return pd.DataFrame(columns=columns).set_index("epoch")
    frame = pd.DataFrame([
        {
            "epoch": r.epoch,
            "classification": r.losses.classification,
            "distorted_reference": r.losses.distorted_reference,
            "distorted_gap": r.losses.distorted_gap,
            "accuracy": r.accuracy,
        }
        for r in history
    ])
    summary = frame.groupby("epoch").agg(
        classification_mean=("classification", "mean"),
        distorted_min=("distorted_reference", "min"),
        distorted_max=("distorted_reference", "max"),
        distorted_mean=("distorted_reference", "mean"),
        distorted_std=("distorted_reference", "std"),
        gap_min=("distorted_gap", "min"),
        gap_max=("distorted_gap", "max"),
        gap_mean=("distorted_gap", "mean"),
        gap_std=("distorted_gap", "std"),
        accuracy_mean=("accuracy", "mean"),
    )
    return summary.fillna(0.0)
