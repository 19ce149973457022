"""
Uncertainty estimation and the uncertainty losses.

Tensor-valued functions work on a single example (shape [C]) or on a batch
(shape [B, C]); per-example results keep the leading batch axis. Reporting
functions (entropy, predictive uncertainty) work on plain numpy arrays.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr

from models.data_models import Example, LossBundle, ModelConfig, ModelParams, UncertaintyEstimate
from models.errors import NumericalFaultError, ValidationError
from services import autodiff as ad
from services.attention_model import classify, forward, make_batch
from services.autodiff import RngStream, Tensor

logger = logging.getLogger(__name__)

UNCERTAINTY_MODES = ("aleatoric", "predictive")
NOISE_SCALINGS = ("std", "variance")


def _as_tensor(value: Union[Tensor, float]) -> Tensor:
    return value if isinstance(value, Tensor) else ad.constant(np.asarray(float(value)))


# ----------------------------------------------------------------------------
# Variance and perturbation
# ----------------------------------------------------------------------------

def aleatoric_variance(raw: Tensor) -> Tensor:
    """σ²_a = softplus(raw), strictly positive."""
    if not np.all(np.isfinite(raw.values)):
        raise NumericalFaultError("raw variance head output is not finite")
    return ad.softplus(raw)


def softmax_entropy(logits: Tensor) -> Tensor:
    """Differentiable entropy of softmax(logits) along the class axis, in nats."""
    log_probs = ad.log_softmax(logits, axis=-1)
    probs = ad.softmax(logits, axis=-1)
    return -ad.sum(probs * log_probs, axis=-1)


def predictive_variance(logits: Tensor, raw_variance: Tensor) -> Tensor:
    """
    Single-pass predictive variance used while training: softplus variance
    plus the entropy of the prediction, broadcast over classes.
    """
    variance = aleatoric_variance(raw_variance)
    entropy = softmax_entropy(logits)
    expanded = ad.reshape(entropy, entropy.shape + (1,))
    return variance + ad.broadcast_to(expanded, variance.shape)


def perturb_logits(logits: Tensor, variance: Tensor, rng: RngStream, samples: int,
                   scaling: str = "std") -> List[Tensor]:
    """
    Draw ``samples`` reparameterized logit vectors.

    Sample t is logits + ε_t ⊙ sqrt(variance) with ε_t ~ N(0, I) drawn per
    class. With ``scaling="variance"`` the noise is scaled by the variance
    itself instead of its square root.
    """
    if samples < 1:
        raise ValidationError("number of noise samples must be at least 1")
    if scaling not in NOISE_SCALINGS:
        raise ValidationError(f"noise scaling must be one of {NOISE_SCALINGS}, got '{scaling}'")
    if logits.shape != variance.shape:
        raise ValidationError(f"logits {logits.shape} and variance {variance.shape} differ in shape")
    if np.any(variance.values <= 0):
        raise ValidationError("variance must be strictly positive")
    scale = ad.sqrt(variance) if scaling == "std" else variance
    perturbed = []
    for _ in range(samples):
        noise = ad.constant(rng.normal(logits.shape))
        perturbed.append(logits + noise * scale)
    return perturbed


def aleatoric_loss(logits: Tensor, variance: Tensor, target, rng: RngStream, samples: int,
                   scaling: str = "std") -> Tensor:
    """
    Negative log of the Monte-Carlo averaged softmax likelihood of the target.

    -log[(1/T) Σ_t exp(ŷ_t[target] - log Σ_c exp ŷ_t[c])], evaluated as a
    log-sum-exp over samples. Per example: scalar for [C] inputs, [B] for
    [B, C] inputs.
    """
    perturbed = perturb_logits(logits, variance, rng, samples, scaling)
    picked = [ad.pick(ad.log_softmax(sample, axis=-1), target) for sample in perturbed]
    stacked = ad.stack(picked, axis=0)
    return -(ad.log_sum_exp(stacked, axis=0) - math.log(samples))


# ----------------------------------------------------------------------------
# Monte-Carlo prediction
# ----------------------------------------------------------------------------

def predictive_entropy(mean_probs) -> float:
    """H = -Σ p log p with 0 log 0 = 0, in nats."""
    probs = np.asarray(mean_probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ValidationError("probabilities must be nonnegative")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValidationError(f"probabilities sum to {probs.sum():.9f}, not 1")
    return float(np.sum(entr(probs)))


def predictive_uncertainty(estimate: UncertaintyEstimate) -> float:
    """σ²_p = H + mean over samples and classes of the per-sample variances."""
    return float(estimate.entropy + np.mean(estimate.per_sample_variances))


def _estimate_from_draws(probs: np.ndarray, variances: np.ndarray, logits: np.ndarray) -> UncertaintyEstimate:
    mean_probs = probs.mean(axis=0)
    entropy = predictive_entropy(mean_probs)
    estimate = UncertaintyEstimate(
        aleatoric_variance=variances.mean(axis=0),
        entropy=entropy,
        predictive=0.0,
        per_sample_variances=variances,
        mean_probs=mean_probs,
        per_sample_probs=probs,
        per_sample_logits=logits,
    )
    estimate.predictive = predictive_uncertainty(estimate)
    return estimate


def mc_predict_batch(examples: Sequence[Example], params: ModelParams, config: ModelConfig,
                     rng: RngStream, samples: int, dropout_rate: float) -> List[UncertaintyEstimate]:
    """
    Monte-Carlo estimates for a batch of examples.

    The encoders and attention are deterministic, so they run once; the
    classifier (where dropout lives) runs ``samples`` times with dropout
    active.
    """
    if samples < 1:
        raise ValidationError("number of Monte-Carlo samples must be at least 1")
    batch = make_batch(examples, config)
    trace = forward(batch, params, config, rng, training=False, dropout_rate=0.0)
    probs, variances, logits = [], [], []
    for _ in range(samples):
        _, sample_logits, raw = classify(trace.f_i, params, dropout_rate, rng, training=True)
        probs.append(ad.softmax(sample_logits, axis=-1).values)
        variances.append(aleatoric_variance(raw).values)
        logits.append(sample_logits.values)
    probs = np.stack(probs, axis=1)
    variances = np.stack(variances, axis=1)
    logits = np.stack(logits, axis=1)
    return [_estimate_from_draws(probs[i], variances[i], logits[i]) for i in range(len(examples))]


def mc_predict(example: Example, params: ModelParams, config: ModelConfig, rng: RngStream,
               samples: int, dropout_rate: float) -> UncertaintyEstimate:
    """Monte-Carlo estimate of one example."""
    return mc_predict_batch([example], params, config, rng, samples, dropout_rate)[0]


# ----------------------------------------------------------------------------
# Uncertainty losses
# ----------------------------------------------------------------------------

def variance_equalizer_loss(variance: Tensor, sigma0_sq: float) -> Tensor:
    """Σ_c relu(exp(σ²_c) - exp(σ0²)) along the class axis."""
    if np.any(variance.values <= 0):
        raise ValidationError("variance must be strictly positive")
    excess = ad.exp(variance) - math.exp(sigma0_sq)
    return ad.sum(ad.relu(excess), axis=-1)


def uncertainty_distorted_loss(distorted, classification, alpha: float) -> Tensor:
    """
    Asymmetric gap penalty between the distorted and the classification loss.

    d = L_p - L_y; α(exp(d) - 1) when d < 0, d otherwise.
    """
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    gap = _as_tensor(distorted) - _as_tensor(classification)
    below = gap.values < 0
    clamped = ad.where(below, gap, ad.constant(np.zeros(gap.shape)))
    negative_branch = (ad.exp(clamped) - 1.0) * alpha
    return ad.where(below, negative_branch, gap)


@dataclass
class LossTerm:
    """
    One uncertainty-loss component tagged with the mode it was computed in.

    Attributes:
        value: Scalar loss
        mode: "aleatoric" or "predictive"
    """
    value: Union[Tensor, float]
    mode: str


def distorted_loss(logits: Tensor, raw_variance: Tensor, target, rng: RngStream, samples: int,
                   mode: str, scaling: str = "std") -> Tensor:
    """
    Per-example distorted loss L_p.

    Aleatoric mode perturbs logits with σ²_a; predictive mode substitutes the
    single-pass predictive variance.
    """
    if mode not in UNCERTAINTY_MODES:
        raise ValidationError(f"uncertainty mode must be one of {UNCERTAINTY_MODES}, got '{mode}'")
    if mode == "aleatoric":
        variance = aleatoric_variance(raw_variance)
    else:
        variance = predictive_variance(logits, raw_variance)
    return aleatoric_loss(logits, variance, target, rng, samples, scaling)


def total_uncertainty_loss(components: Dict[str, LossTerm], mode: str,
                           classification: float = 0.0, variant: str = "",
                           distorted_reference: Optional[float] = None) -> Tuple[Tensor, LossBundle]:
    """
    Sum the enabled uncertainty components into L_u.

    Args:
        components: Enabled terms keyed by "distorted", "variance_equalizer"
            or "distorted_gap"; missing keys contribute 0
        mode: "aleatoric" or "predictive"; every term must carry it
        classification: L_y recorded alongside
        variant: Training mode name recorded in the bundle
        distorted_reference: L_p as computed even when it is not enabled

    Returns:
        Tuple of (L_u as a tensor, LossBundle)
    """
    if mode not in UNCERTAINTY_MODES:
        raise ValidationError(f"uncertainty mode must be one of {UNCERTAINTY_MODES}, got '{mode}'")
    names = ("distorted", "variance_equalizer", "distorted_gap")
    unknown = set(components) - set(names)
    if unknown:
        raise ValidationError(f"unknown loss components: {', '.join(sorted(unknown))}")
    for name, term in components.items():
        if term.mode != mode:
            raise ValidationError(f"component '{name}' was computed in {term.mode} mode, expected {mode}")

    values = {name: float(_as_tensor(components[name].value).item()) if name in components else 0.0
              for name in names}
    total = ad.constant(np.asarray(0.0))
    for name in names:
        if name in components:
            total = total + _as_tensor(components[name].value)
    reference = values["distorted"] if distorted_reference is None else float(distorted_reference)
    bundle = LossBundle(
        classification=float(classification),
        distorted=values["distorted"],
        variance_equalizer=values["variance_equalizer"],
        distorted_gap=values["distorted_gap"],
        total_uncertainty=values["distorted"] + values["variance_equalizer"] + values["distorted_gap"],
        mode=mode,
        variant=variant,
        enabled=tuple(name for name in names if name in components),
        distorted_reference=reference,
    )
    return total, bundle
