"""
Evaluation metrics and uncertainty reports.

Covers answer accuracy, rank correlation and earth mover's distance between
attention maps, the uncertainty-versus-error report, the epistemic
data-fraction sweep and the aleatoric noisy/clean comparison.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from scipy.stats import rankdata

from models.data_models import (
    AttentionMap,
    Dataset,
    MetricsConfig,
    MetricsReport,
    ModelParams,
    RunConfig,
    UncertaintyErrorReport,
    UncertaintyEstimate,
)
from models.errors import NumericalFaultError, ShapeError, ValidationError
from services.attention_model import make_batch, predict
from services.autodiff import RngStream
from services.uncertainty_service import mc_predict_batch

logger = logging.getLogger(__name__)

ANNOTATIONS_PER_EXAMPLE = 10
AGREEMENT_THRESHOLD = 3
EXACT_EMD_MAX_BINS = 16
MC_STREAM = 5
SWEEP_STREAM = 6


# ----------------------------------------------------------------------------
# Accuracy and rank correlation
# ----------------------------------------------------------------------------

def vqa_accuracy(predicted: int, annotations: Sequence[int]) -> float:
    """min(#annotations equal to the prediction / 3, 1)."""
    if len(annotations) == 0:
        raise ValidationError("annotations must not be empty")
    matches = sum(1 for a in annotations if a == predicted)
    return min(matches / AGREEMENT_THRESHOLD, 1.0)


def spearman_rank_correlation(a: Sequence[float], b: Sequence[float]) -> Optional[float]:
    """
    Pearson correlation of average ranks.

    Returns:
        Correlation in [-1, 1], or None when either ranking has zero variance
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValidationError(f"rank correlation needs equal lengths, got {a.size} and {b.size}")
    if a.size < 2:
        raise ValidationError("rank correlation needs at least 2 values")
    ranks_a = rankdata(a, method="average")
    ranks_b = rankdata(b, method="average")
    centered_a = ranks_a - ranks_a.mean()
    centered_b = ranks_b - ranks_b.mean()
    norm = math.sqrt(float(np.dot(centered_a, centered_a)) * float(np.dot(centered_b, centered_b)))
    if norm == 0.0:
        return None
    return float(np.clip(np.dot(centered_a, centered_b) / norm, -1.0, 1.0))


# ----------------------------------------------------------------------------
# Earth mover's distance
# ----------------------------------------------------------------------------

def _check_map(attention: AttentionMap, name: str) -> np.ndarray:
    grid = np.asarray(attention.grid, dtype=np.float64)
    if np.any(grid < 0):
        raise ValidationError(f"{name} has negative entries")
    if abs(grid.sum() - 1.0) > 1e-6:
        raise ValidationError(f"{name} is not normalized (sums to {grid.sum():.6f})")
    return grid


def _cell_centers(rows: int, cols: int) -> np.ndarray:
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([r.reshape(-1), c.reshape(-1)], axis=1).astype(np.float64)


def _sinkhorn(a: np.ndarray, b: np.ndarray, cost: np.ndarray, epsilon: float, tolerance: float,
              max_iterations: int) -> float:
    """Log-domain Sinkhorn; returns the transport cost of the regularized plan."""
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    plan = None
    for iteration in range(1, max_iterations + 1):
        f = epsilon * (log_a - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - cost) / epsilon, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
        violation = float(np.max(np.abs(plan.sum(axis=1) - a)))
        if violation < tolerance:
            break
    else:
        logger.warning("⚠️ Sinkhorn stopped at %d iterations (marginal violation %.2e)", max_iterations, violation)
    return float(np.sum(plan * cost))


def _exact_transport(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    n, m = cost.shape
    rows = np.zeros((n, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    cols = np.zeros((m, n * m))
    for j in range(m):
        cols[j, j::m] = 1.0
    result = linprog(
        cost.reshape(-1),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    if result.status != 0:
        raise NumericalFaultError(f"transport LP failed: {result.message}")
    return float(max(result.fun, 0.0))


def emd(map_a: AttentionMap, map_b: AttentionMap, method: str = "sinkhorn", epsilon: float = 0.01,
        tolerance: float = 1e-7, max_iterations: int = 10000) -> float:
    """
    Earth mover's distance with Euclidean ground cost between cell centers.

    Args:
        map_a, map_b: Normalized maps with equal extents
        method: "sinkhorn" (entropic, log domain) or "exact_small" (LP, at most 16 cells)
        epsilon: Entropic regularization strength
        tolerance: Row-marginal violation at which Sinkhorn stops
        max_iterations: Sinkhorn iteration cap

    Returns:
        Transport cost, nonnegative
    """
    grid_a = _check_map(map_a, "first map")
    grid_b = _check_map(map_b, "second map")
    if grid_a.shape != grid_b.shape:
        raise ShapeError(f"attention maps differ in extents: {grid_a.shape} vs {grid_b.shape}")
    rows, cols = grid_a.shape
    if method == "exact_small" and rows * cols > EXACT_EMD_MAX_BINS:
        raise ValidationError(
            f"exact EMD is limited to {EXACT_EMD_MAX_BINS} cells, maps have {rows * cols}; use the sinkhorn method"
        )
    if method not in ("sinkhorn", "exact_small"):
        raise ValidationError(f"unknown EMD method '{method}'")

    flat_a, flat_b = grid_a.reshape(-1), grid_b.reshape(-1)
    support_a, support_b = np.flatnonzero(flat_a > 0), np.flatnonzero(flat_b > 0)
    a = flat_a[support_a] / flat_a[support_a].sum()
    b = flat_b[support_b] / flat_b[support_b].sum()
    centers = _cell_centers(rows, cols)
    cost = cdist(centers[support_a], centers[support_b])
    if method == "exact_small":
        return _exact_transport(a, b, cost)
    return max(_sinkhorn(a, b, cost, epsilon, tolerance, max_iterations), 0.0)


# ----------------------------------------------------------------------------
# Uncertainty reports
# ----------------------------------------------------------------------------

def uncertainty_error_report(estimates: Sequence[UncertaintyEstimate], predictions: Sequence[int],
                             targets: Sequence[int]) -> UncertaintyErrorReport:
    """
    Predictive uncertainty against misclassification.

    Error per example is log 1/(1 - p_miss) with p_miss = 1 - mean_probs[target];
    p_miss = 1 gives an infinite error, which is excluded from the means and
    from the point-biserial correlation.
    """
    if not (len(estimates) == len(predictions) == len(targets)):
        raise ValidationError("estimates, predictions and targets must be aligned")
    predictive = np.array([e.predictive for e in estimates], dtype=np.float64)
    wrong = np.array([int(p) != int(t) for p, t in zip(predictions, targets)], dtype=bool)
    errors = []
    for estimate, target in zip(estimates, targets):
        p_hit = float(estimate.mean_probs[int(target)])
        errors.append(math.inf if p_hit <= 0.0 else -math.log(p_hit))
    errors = np.array(errors, dtype=np.float64)
    finite = np.isfinite(errors)

    correlation = None
    indicator = wrong[finite].astype(np.float64)
    values = predictive[finite]
    if values.size >= 2 and np.std(indicator) > 0 and np.std(values) > 0:
        correlation = float(np.clip(np.corrcoef(values, indicator)[0, 1], -1.0, 1.0))

    return UncertaintyErrorReport(
        mean_predictive_correct=float(predictive[~wrong].mean()) if np.any(~wrong) else None,
        mean_predictive_wrong=float(predictive[wrong].mean()) if np.any(wrong) else None,
        point_biserial=correlation,
        mean_classification_error=float(errors[finite].mean()) if np.any(finite) else None,
        classification_errors=errors.tolist(),
        num_correct=int(np.sum(~wrong)),
        num_wrong=int(np.sum(wrong)),
        num_infinite=int(np.sum(~finite)),
    )


def aleatoric_subset_report(estimates: Sequence[UncertaintyEstimate], noise_flags: Sequence[bool]) -> Dict[str, float]:
    """
    Mean σ²_a over classes and examples, split by the label-noise flag.

    Returns:
        {"clean": mean, "noisy": mean}, with only the subsets that have members
    """
    if len(estimates) != len(noise_flags):
        raise ValidationError("estimates and noise flags must be aligned")
    if not estimates:
        raise ValidationError("aleatoric subset report needs at least one estimate")
    flags = np.asarray(noise_flags, dtype=bool)
    means = np.array([float(np.mean(e.aleatoric_variance)) for e in estimates])
    report = {}
    if np.any(~flags):
        report["clean"] = float(means[~flags].mean())
    if np.any(flags):
        report["noisy"] = float(means[flags].mean())
    return report


def estimate_dataset(dataset: Dataset, params: ModelParams, config: RunConfig,
                     rng: Optional[RngStream] = None, batch_size: int = 256) -> List[UncertaintyEstimate]:
    """Monte-Carlo estimates for every example, in dataset order."""
    rng = rng if rng is not None else RngStream(config.train.seed, MC_STREAM)
    estimates: List[UncertaintyEstimate] = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.examples[start:start + batch_size]
        estimates.extend(mc_predict_batch(
            chunk, params, config.model, rng, config.train.eval_mc_samples, config.train.dropout_rate,
        ))
    return estimates


def epistemic_sweep(train_set: Dataset, held_out: Dataset, fractions: Sequence[float], config: RunConfig) -> List[Dict]:
    """
    Train one model per training fraction and measure predictive entropy.

    Every fraction uses a prefix of the same seeded shuffle and the same
    training seed, so larger fractions see a superset of the data.

    Returns:
        One record per fraction: fraction, train_examples, mean_entropy, entropy_variance
    """
    from services.gca_trainer import train

    if len(held_out) == 0:
        raise ValidationError("epistemic sweep needs a nonempty held-out set")
    order = RngStream(config.train.seed, SWEEP_STREAM).permutation(len(train_set))
    records = []
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ValidationError(f"sweep fraction {fraction} must lie in (0, 1]")
        count = int(round(fraction * len(train_set)))
        if count == 0:
            raise ValidationError(f"sweep fraction {fraction} leaves no training examples")
        subset = train_set.subset(sorted(int(i) for i in order[:count]))
        result = train(subset, config)
        entropies = np.array([e.entropy for e in estimate_dataset(held_out, result.params, config)])
        records.append({
            "fraction": float(fraction),
            "train_examples": count,
            "mean_entropy": float(entropies.mean()),
            "entropy_variance": float(entropies.var()),
        })
        logger.info("✓ Sweep fraction %.2f: %d examples, mean entropy %.4f", fraction, count, entropies.mean())
    return records


# ----------------------------------------------------------------------------
# Full evaluation
# ----------------------------------------------------------------------------

def evaluate_model(dataset: Dataset, params: ModelParams, config: RunConfig,
                   reference_maps: Optional[Dict[str, np.ndarray]] = None, self_check: bool = False,
                   subset_report: bool = False, batch_size: int = 256):
    """
    Accuracy, attention quality and uncertainty of a trained model.

    Args:
        dataset: Examples to evaluate
        params: Trained parameters
        config: Effective run configuration
        reference_maps: Attention maps by example id that replace gt_attention
        self_check: Compare the model attention against itself
        subset_report: Include the noisy/clean aleatoric comparison even without noisy examples

    Returns:
        Tuple of (MetricsReport, estimates, predictions, attention maps (n, u, v))
    """
    if len(dataset) == 0:
        raise ValidationError("evaluation set is empty")
    metrics: MetricsConfig = config.metrics
    predictions, attention = [], []
    for start in range(0, len(dataset), batch_size):
        batch = make_batch(dataset.examples[start:start + batch_size], config.model)
        chunk_predictions, chunk_attention = predict(batch, params, config.model)
        predictions.append(chunk_predictions)
        attention.append(chunk_attention)
    predictions = np.concatenate(predictions)
    attention = np.concatenate(attention)
    estimates = estimate_dataset(dataset, params, config, batch_size=batch_size)

    accuracies, correlations, distances = [], [], []
    for index, example in enumerate(dataset):
        accuracies.append(vqa_accuracy(int(predictions[index]), [example.answer] * ANNOTATIONS_PER_EXAMPLE))
        if self_check:
            reference = attention[index]
        elif reference_maps is not None and example.example_id in reference_maps:
            reference = reference_maps[example.example_id]
        else:
            reference = example.gt_attention
        correlation = spearman_rank_correlation(attention[index], reference)
        if correlation is not None:
            correlations.append(correlation)
        distances.append(emd(
            AttentionMap.from_array(attention[index]), AttentionMap.from_array(reference),
            method=metrics.emd_method, epsilon=metrics.sinkhorn_epsilon,
            tolerance=metrics.sinkhorn_tolerance, max_iterations=metrics.sinkhorn_max_iterations,
        ))

    targets = [e.answer for e in dataset]
    flags = [e.noisy for e in dataset]
    report = MetricsReport(
        accuracy=float(np.mean(accuracies)),
        rank_correlation=float(np.mean(correlations)) if correlations else None,
        emd=float(np.mean(distances)),
        uncertainty_error=uncertainty_error_report(estimates, predictions.tolist(), targets),
        subset_aleatoric=aleatoric_subset_report(estimates, flags) if (subset_report or any(flags)) else None,
        num_examples=len(dataset),
    )
    return report, estimates, predictions, attention
