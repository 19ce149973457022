import numpy as np
import pytest
from scipy.special import log_softmax

from models.data_models import Example, ModelConfig, ModelParams
from models.errors import ShapeError, ValidationError
from services import autodiff as ad
from services.attention_model import (
    attend,
    encode_question,
    forward,
    init_params,
    make_batch,
    parameter_shapes,
    predict,
    validate_params,
)
from services.autodiff import RngStream, Tape, Tensor
from services.gca_trainer import classification_loss

TINY = ModelConfig(grid_rows=2, grid_cols=2, feature_width=3, hidden_size=3, vocab_size=6,
                   max_question_length=3, num_classes=3)


def _tiny_examples():
    rng = np.random.default_rng(0)
    attention = np.array([[1.0, 0.0], [0.0, 0.0]])
    return [
        Example("a", rng.normal(size=(2, 2, 3)), [1, 4, 2], 0, attention),
        Example("b", rng.normal(size=(2, 2, 3)), [5, 3], 2, attention),
    ]


def _mean_loss(batch, params):
    trace = forward(batch, params, TINY, None, training=False, dropout_rate=0.0)
    log_probs = log_softmax(trace.logits.values, axis=1)
    return float(-np.mean(log_probs[np.arange(len(batch)), batch.answers]))


class TestForward:
    def test_shapes_and_attention_simplex(self, run_config, dataset):
        model = run_config.model
        batch = make_batch(dataset.examples[:5], model)
        trace = forward(batch, init_params(model, RngStream(0)), model, RngStream(1), True, 0.2)
        assert trace.g_i.shape == (5, 3, 3, model.hidden_size)
        assert trace.g_q.shape == (5, model.hidden_size)
        assert trace.f_i.shape == (5, 2 * model.hidden_size)
        assert trace.logits.shape == (5, model.num_classes)
        assert trace.raw_variance.shape == (5, model.num_classes)
        assert trace.attention.shape == (5, 3, 3)
        assert np.all(trace.attention >= 0)
        np.testing.assert_allclose(trace.attention.sum(axis=(1, 2)), 1.0, atol=1e-12)

    def test_predict_is_deterministic(self, run_config, dataset):
        model = run_config.model
        batch = make_batch(dataset.examples[:6], model)
        params = init_params(model, RngStream(0))
        first, maps = predict(batch, params, model)
        second, again = predict(batch, params, model)
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(maps, again)

    def test_padding_does_not_change_short_questions(self):
        params = init_params(TINY, RngStream(2))
        example = _tiny_examples()[1]
        alone = forward(make_batch([example], TINY), params, TINY, None, False, 0.0)
        together = forward(make_batch(_tiny_examples(), TINY), params, TINY, None, False, 0.0)
        np.testing.assert_allclose(alone.logits.values[0], together.logits.values[1], atol=1e-12)

    def test_end_to_end_gradients_match_finite_differences(self):
        batch = make_batch(_tiny_examples(), TINY)
        params = init_params(TINY, RngStream(4))
        with Tape():
            trace = forward(batch, params, TINY, None, training=False, dropout_rate=0.0)
            loss = ad.mean(classification_loss(trace.logits, batch.answers))
        store = ad.backward(loss)
        analytic = {key: store.get_or_zeros(leaf) for key, leaf in trace.leaf_items()}

        eps = 1e-6
        flat = params.flat()
        for key, value in flat.items():
            numeric = np.zeros_like(value)
            for position in np.ndindex(value.shape):
                shifted = {k: v.copy() for k, v in flat.items()}
                shifted[key][position] += eps
                upper = _mean_loss(batch, ModelParams.from_flat(shifted))
                shifted[key][position] -= 2 * eps
                lower = _mean_loss(batch, ModelParams.from_flat(shifted))
                numeric[position] = (upper - lower) / (2 * eps)
            np.testing.assert_allclose(analytic[key], numeric, rtol=1e-4, atol=1e-7, err_msg=key)


class TestAttentionAndEncoder:
    def test_dominant_score_takes_the_weight(self):
        cells = np.zeros((1, 2, 2, 1))
        cells[0, 0, 0, 0] = 3.0
        leaves = {
            "W_a": Tensor(np.ones((1, 1))), "W_b": Tensor(np.zeros((1, 1))), "b_a": Tensor(np.zeros(1)),
            "w": Tensor(np.full((1, 1), 10.0 / np.tanh(3.0))),
        }
        # cell 0 scores 10, the rest score 0
        weights, f_i = attend(Tensor(cells), Tensor(np.zeros((1, 1))), leaves)
        assert weights.values[0, 0] > 0.99
        assert weights.values[0].sum() == pytest.approx(1.0)
        assert f_i.shape == (1, 2)

    def test_token_order_changes_the_encoding(self):
        leaves = {k: Tensor(v) for k, v in init_params(TINY, RngStream(0)).groups["question"].items()}
        forward_order = encode_question(np.array([[1, 4]]), np.array([2]), leaves).values
        reversed_order = encode_question(np.array([[4, 1]]), np.array([2]), leaves).values
        assert not np.allclose(forward_order, reversed_order)


class TestParameters:
    def test_init_is_seeded(self):
        a = init_params(TINY, RngStream(9)).flat()
        b = init_params(TINY, RngStream(9)).flat()
        assert a.keys() == b.keys()
        for key in a:
            np.testing.assert_array_equal(a[key], b[key])

    def test_init_respects_fan_in_bound(self):
        params = init_params(TINY, RngStream(1))
        for group, shapes in parameter_shapes(TINY).items():
            for name, (shape, fan_in) in shapes.items():
                value = params.groups[group][name]
                assert value.shape == shape
                assert np.all(np.abs(value) <= 1.0 / np.sqrt(fan_in))

    def test_validate_accepts_fresh_params(self):
        validate_params(init_params(TINY, RngStream(0)), TINY)

    def test_validate_rejects_wrong_shape(self):
        params = init_params(TINY, RngStream(0))
        params.groups["logit"]["W"] = np.zeros((3, 7))
        with pytest.raises(ShapeError):
            validate_params(params, TINY)

    def test_validate_rejects_missing_parameter(self):
        params = init_params(TINY, RngStream(0))
        del params.groups["attention"]["w"]
        with pytest.raises(ShapeError):
            validate_params(params, TINY)

    def test_validate_rejects_non_finite(self):
        params = init_params(TINY, RngStream(0))
        params.groups["trunk"]["b"][0] = np.nan
        with pytest.raises(ValidationError):
            validate_params(params, TINY)


class TestBatchChecks:
    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            make_batch([], TINY)

    def test_grid_shape(self):
        example = Example("x", np.zeros((3, 2, 3)), [1], 0, np.full((3, 2), 1 / 6))
        with pytest.raises(ShapeError):
            make_batch([example], TINY)

    def test_question_too_long(self):
        example = Example("x", np.zeros((2, 2, 3)), [1, 2, 3, 4], 0, np.full((2, 2), 0.25))
        with pytest.raises(ValidationError):
            make_batch([example], TINY)

    def test_token_out_of_vocabulary(self):
        example = Example("x", np.zeros((2, 2, 3)), [1, 6], 0, np.full((2, 2), 0.25))
        batch = make_batch([example], TINY)
        with pytest.raises(ValidationError):
            forward(batch, init_params(TINY, RngStream(0)), TINY, None, False, 0.0)

    def test_dropout_needs_stream(self):
        batch = make_batch(_tiny_examples(), TINY)
        with pytest.raises(ValidationError):
            forward(batch, init_params(TINY, RngStream(0)), TINY, None, training=True, dropout_rate=0.5)
