import math

import numpy as np
import pytest

from models.errors import ValidationError
from services.attention_model import forward, init_params, make_batch
from services.autodiff import RngStream, Tensor
from services.uncertainty_service import (
    LossTerm,
    aleatoric_loss,
    aleatoric_variance,
    distorted_loss,
    mc_predict,
    mc_predict_batch,
    perturb_logits,
    predictive_entropy,
    predictive_uncertainty,
    total_uncertainty_loss,
    uncertainty_distorted_loss,
    variance_equalizer_loss,
)
from tests.gradient_check import assert_gradients_match


def _cross_entropy(logits, target):
    shifted = logits - logits.max()
    return -(shifted[target] - math.log(np.exp(shifted).sum()))


class TestAleatoricLoss:
    def test_vanishing_variance_gives_cross_entropy(self):
        logits = np.array([0.3, -1.2, 2.0, 0.1])
        loss = aleatoric_loss(Tensor(logits), Tensor(np.full(4, 1e-20)), 2, RngStream(0), 10)
        assert abs(loss.item() - _cross_entropy(logits, 2)) < 1e-9

    def test_batched_shape(self):
        logits = Tensor(np.zeros((3, 4)))
        loss = aleatoric_loss(logits, Tensor(np.ones((3, 4))), [0, 1, 2], RngStream(0), 5)
        assert loss.shape == (3,)

    def test_gradients(self):
        logits = np.random.default_rng(0).normal(size=(2, 3))
        raw = np.random.default_rng(1).normal(size=(2, 3))
        assert_gradients_match(
            lambda l, r: aleatoric_loss(l, aleatoric_variance(r), [1, 0], RngStream(3), 4), [logits, raw],
        )

    def test_predictive_distorted_loss_gradients(self):
        logits = np.random.default_rng(2).normal(size=(2, 3))
        raw = np.random.default_rng(3).normal(size=(2, 3))
        assert_gradients_match(
            lambda l, r: distorted_loss(l, r, [2, 1], RngStream(4), 3, mode="predictive"), [logits, raw],
        )

    def test_variance_scaling_differs_from_std_scaling(self):
        logits, variance = Tensor(np.zeros(3)), Tensor(np.full(3, 4.0))
        std = perturb_logits(logits, variance, RngStream(1), 1, scaling="std")[0].values
        var = perturb_logits(logits, variance, RngStream(1), 1, scaling="variance")[0].values
        np.testing.assert_allclose(var, 2.0 * std)

    def test_noise_has_requested_spread(self):
        logits = Tensor(np.zeros((100_000, 3)))
        variance = Tensor(np.tile([1.0, 4.0, 1.0], (100_000, 1)))
        sample = perturb_logits(logits, variance, RngStream(5), 1)[0].values
        assert abs(sample[:, 1].std() - 2.0) < 0.02 * 2.0
        assert abs(sample[:, 0].std() - 1.0) < 0.02

    def test_noise_raises_confident_loss(self):
        # averaging the softmax over noise lowers a saturated target probability
        logits = np.array([5.0, 0.0, 0.0])
        noisy = aleatoric_loss(Tensor(logits), Tensor(np.full(3, 4.0)), 0, RngStream(6), 10_000)
        assert noisy.item() > _cross_entropy(logits, 0)

    def test_predictive_loss_exceeds_aleatoric_loss(self):
        logits, raw = Tensor(np.array([5.0, 0.0, 0.0])), Tensor(np.zeros(3))
        aleatoric = distorted_loss(logits, raw, 0, RngStream(7), 10_000, mode="aleatoric")
        predictive = distorted_loss(logits, raw, 0, RngStream(7), 10_000, mode="predictive")
        assert predictive.item() > aleatoric.item()

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValidationError):
            perturb_logits(Tensor(np.zeros(2)), Tensor(np.array([1.0, 0.0])), RngStream(0), 2)

    def test_rejects_zero_samples(self):
        with pytest.raises(ValidationError):
            perturb_logits(Tensor(np.zeros(2)), Tensor(np.ones(2)), RngStream(0), 0)

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            distorted_loss(Tensor(np.zeros(2)), Tensor(np.zeros(2)), 0, RngStream(0), 1, mode="epistemic")


class TestRegularizers:
    def test_equalizer_zero_below_reference(self):
        loss = variance_equalizer_loss(Tensor(np.array([0.2, 0.9, 1.0])), sigma0_sq=1.0)
        assert loss.item() == 0.0

    def test_equalizer_above_reference(self):
        loss = variance_equalizer_loss(Tensor(np.array([2.0, 0.5])), sigma0_sq=1.0)
        assert loss.item() == pytest.approx(math.exp(2.0) - math.e)

    def test_gap_loss_zero_and_continuous_at_zero(self):
        assert uncertainty_distorted_loss(1.3, 1.3, alpha=1.0).item() == 0.0
        above = uncertainty_distorted_loss(1.0 + 1e-8, 1.0, alpha=1.0).item()
        below = uncertainty_distorted_loss(1.0 - 1e-8, 1.0, alpha=1.0).item()
        assert abs(above) < 1e-7 and abs(below) < 1e-7

    def test_gap_loss_branches(self):
        assert uncertainty_distorted_loss(3.0, 1.0, alpha=2.0).item() == pytest.approx(2.0)
        assert uncertainty_distorted_loss(1.0, 3.0, alpha=2.0).item() == pytest.approx(2.0 * (math.exp(-2.0) - 1.0))

    def test_gap_loss_needs_positive_alpha(self):
        with pytest.raises(ValidationError):
            uncertainty_distorted_loss(1.0, 1.0, alpha=0.0)


class TestTotalUncertaintyLoss:
    def test_additivity(self):
        components = {
            "distorted": LossTerm(1.0, "aleatoric"),
            "variance_equalizer": LossTerm(0.5, "aleatoric"),
            "distorted_gap": LossTerm(0.25, "aleatoric"),
        }
        total, bundle = total_uncertainty_loss(components, "aleatoric")
        assert total.item() == 1.75
        assert bundle.total_uncertainty == 1.75
        assert bundle.enabled == ("distorted", "variance_equalizer", "distorted_gap")

    def test_missing_components_contribute_zero(self):
        total, bundle = total_uncertainty_loss({"variance_equalizer": LossTerm(0.5, "predictive")}, "predictive")
        assert total.item() == 0.5
        assert bundle.distorted == 0.0 and bundle.distorted_gap == 0.0

    def test_mode_mismatch(self):
        with pytest.raises(ValidationError):
            total_uncertainty_loss({"distorted": LossTerm(1.0, "predictive")}, "aleatoric")

    def test_unknown_component(self):
        with pytest.raises(ValidationError):
            total_uncertainty_loss({"epistemic": LossTerm(1.0, "aleatoric")}, "aleatoric")


class TestMonteCarloPrediction:
    def test_entropy_bounds(self):
        assert predictive_entropy([1.0, 0.0, 0.0]) == 0.0
        assert predictive_entropy([0.25] * 4) == pytest.approx(math.log(4))

    def test_entropy_rejects_non_distribution(self):
        with pytest.raises(ValidationError):
            predictive_entropy([0.5, 0.6])

    def test_single_sample_without_dropout_matches_forward(self, run_config, dataset):
        params = init_params(run_config.model, RngStream(0))
        example = dataset[0]
        estimate = mc_predict(example, params, run_config.model, RngStream(1), samples=1, dropout_rate=0.0)
        trace = forward(make_batch([example], run_config.model), params, run_config.model, None, False, 0.0)
        np.testing.assert_allclose(estimate.per_sample_logits[0], trace.logits.values[0], rtol=0, atol=0)
        np.testing.assert_allclose(estimate.per_sample_variances[0], aleatoric_variance(trace.raw_variance).values[0])

    def test_estimate_fields(self, run_config, dataset):
        params = init_params(run_config.model, RngStream(0))
        estimates = mc_predict_batch(dataset.examples[:5], params, run_config.model, RngStream(2), 6, 0.3)
        classes = run_config.model.num_classes
        for estimate in estimates:
            assert estimate.samples == 6
            assert estimate.per_sample_variances.shape == (6, classes)
            assert 0.0 <= estimate.entropy <= math.log(classes) + 1e-12
            reconstructed = estimate.entropy + estimate.per_sample_variances.mean()
            assert abs(estimate.predictive - reconstructed) < 1e-12
            assert predictive_uncertainty(estimate) == estimate.predictive
            assert set(estimate.to_dict()) == {
                "aleatoric_variance", "entropy", "predictive", "per_sample_variances", "mean_probs",
            }

    def test_zero_samples_rejected(self, run_config, dataset):
        params = init_params(run_config.model, RngStream(0))
        with pytest.raises(ValidationError):
            mc_predict(dataset[0], params, run_config.model, RngStream(0), samples=0, dropout_rate=0.1)

    def test_variance_is_positive(self):
        variance = aleatoric_variance(Tensor(np.array([-50.0, 0.0, 3.0])))
        assert np.all(variance.values > 0)
        np.testing.assert_allclose(variance.values[1], math.log(2.0))

