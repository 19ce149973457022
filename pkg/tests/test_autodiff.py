import numpy as np
import pytest

from models.errors import NumericalFaultError, ShapeError, ValidationError
from services import autodiff as ad
from services.autodiff import RngStream, Tape, Tensor
from tests.gradient_check import assert_gradients_match


def _random(shape, seed=0, low=-2.0, high=2.0):
    return np.random.default_rng(seed).uniform(low, high, size=shape)


class TestRngStream:
    def test_same_seed_and_stream_repeat(self):
        a = RngStream(7, 3).normal((5,))
        b = RngStream(7, 3).normal((5,))
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent(self):
        a = RngStream(7, 1).normal((5,))
        b = RngStream(7, 2).normal((5,))
        assert not np.array_equal(a, b)

    def test_fork_matches_fresh_stream(self):
        parent = RngStream(11, 0)
        parent.normal((3,))
        np.testing.assert_array_equal(parent.fork(4).uniform((4,)), RngStream(11, 4).uniform((4,)))

    def test_counter_advances(self):
        rng = RngStream(0)
        before = rng.counter
        rng.normal((10,))
        assert rng.counter != before


class TestBuildTensor:
    def test_zero_fill(self):
        with Tape() as tape:
            t = ad.build_tensor((2, 3))
        np.testing.assert_array_equal(t.values, np.zeros((2, 3)))
        assert len(tape) == 1

    def test_explicit_values_row_major(self):
        t = ad.build_tensor((2, 2), values=[1, 2, 3, 4])
        np.testing.assert_array_equal(t.values, [[1, 2], [3, 4]])

    def test_gaussian_fill_is_seeded(self):
        a = ad.build_tensor((3,), fill="gaussian", rng=RngStream(5))
        b = ad.build_tensor((3,), fill="gaussian", rng=RngStream(5))
        np.testing.assert_array_equal(a.values, b.values)

    def test_wrong_value_count(self):
        with pytest.raises(ShapeError):
            ad.build_tensor((2, 2), values=[1, 2, 3])

    def test_nonpositive_extent(self):
        with pytest.raises(ShapeError):
            ad.build_tensor((0, 2))

    def test_gaussian_needs_rng(self):
        with pytest.raises(ValidationError):
            ad.build_tensor((2,), fill="gaussian")

    def test_sealed_tape_rejects_records(self):
        with Tape() as tape:
            ad.build_tensor((1,))
        with pytest.raises(ValidationError):
            tape.record_leaf(np.zeros(1))


class TestElementwise:
    @pytest.mark.parametrize("kind", ["relu", "softplus", "tanh", "exponential", "negate", "sigmoid", "square"])
    def test_unary_gradients(self, kind):
        x = _random((3, 4), seed=1)
        # keep relu inputs away from its kink
        x[np.abs(x) < 1e-2] = 0.5
        assert_gradients_match(lambda a: ad.elementwise(kind, a), [x])

    def test_logarithm_and_sqrt_gradients(self):
        x = _random((4,), seed=2, low=0.5, high=3.0)
        assert_gradients_match(ad.log, [x])
        assert_gradients_match(ad.sqrt, [x])

    @pytest.mark.parametrize("kind", ["add", "subtract", "multiply"])
    def test_binary_gradients(self, kind):
        assert_gradients_match(lambda a, b: ad.elementwise(kind, a, b), [_random((2, 3), 3), _random((2, 3), 4)])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.elementwise("add", Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_log_domain_error(self):
        with pytest.raises(ValidationError):
            ad.log(Tensor(np.array([1.0, 0.0])))

    def test_exp_overflow_is_a_numerical_fault(self):
        with pytest.raises(NumericalFaultError):
            ad.exp(Tensor(np.array([1000.0])))

    def test_softplus_is_stable_for_large_inputs(self):
        out = ad.softplus(Tensor(np.array([800.0, -800.0])))
        np.testing.assert_allclose(out.values, [800.0, 0.0], atol=1e-12)

    def test_where_gradient(self):
        mask = np.array([True, False, True])
        assert_gradients_match(lambda a, b: ad.where(mask, a, b), [_random((3,), 5), _random((3,), 6)])


class TestStructuredOps:
    def test_matmul_gradient(self):
        assert_gradients_match(ad.matmul, [_random((3, 4), 7), _random((4, 2), 8)])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_softmax_sums_to_one_and_gradient(self):
        x = _random((2, 5), 9)
        out = ad.softmax(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.values.sum(axis=-1), 1.0, atol=1e-12)
        assert_gradients_match(lambda a: ad.softmax(a, axis=1), [x])
        assert_gradients_match(lambda a: ad.softmax(a, axis=0), [x])

    def test_softmax_of_large_values_is_finite(self):
        out = ad.softmax(Tensor(np.array([1000.0, 1000.0])))
        np.testing.assert_allclose(out.values, [0.5, 0.5])

    def test_log_sum_exp_and_log_softmax_gradients(self):
        x = _random((3, 4), 10)
        assert_gradients_match(lambda a: ad.log_sum_exp(a, axis=-1), [x])
        assert_gradients_match(lambda a: ad.log_softmax(a, axis=-1), [x])

    def test_reductions_and_shapes(self):
        x = _random((2, 3), 11)
        assert_gradients_match(lambda a: ad.sum(a), [x])
        assert_gradients_match(lambda a: ad.sum(a, axis=0), [x])
        assert_gradients_match(lambda a: ad.mean(a, axis=1), [x])
        assert_gradients_match(lambda a: ad.reshape(a, (3, 2)), [x])
        assert_gradients_match(lambda a: ad.broadcast_to(ad.reshape(a, (2, 3, 1)), (2, 3, 4)), [x])

    def test_concat_and_stack(self):
        a, b = _random((2, 2), 12), _random((2, 3), 13)
        assert_gradients_match(lambda p, q: ad.concat([p, q], axis=1), [a, b])
        assert_gradients_match(lambda p, q: ad.stack([p, q], axis=0), [a, _random((2, 2), 14)])

    def test_pick_and_embedding(self):
        x = _random((3, 4), 15)
        assert_gradients_match(lambda a: ad.pick(a, [0, 3, 1]), [x])
        table = _random((5, 2), 16)
        # repeated ids accumulate
        assert_gradients_match(lambda t: ad.embedding(t, [[1, 1], [4, 0]]), [table])

    def test_pick_out_of_range(self):
        with pytest.raises(ValidationError):
            ad.pick(Tensor(np.zeros((1, 3))), [3])

    def test_dropout_identity_when_not_training(self):
        x = Tensor(np.ones(4))
        assert ad.dropout(x, 0.5, RngStream(0), training=False) is x
        assert ad.dropout(x, 0.0, RngStream(0), training=True) is x

    def test_dropout_scales_survivors(self):
        out = ad.dropout(Tensor(np.ones(1000)), 0.25, RngStream(0), training=True)
        assert set(np.unique(out.values)) <= {0.0, 1.0 / 0.75}

    def test_dropout_preserves_mean(self):
        out = ad.dropout(Tensor(np.ones(10 ** 6)), 0.5, RngStream(0), training=True)
        assert abs(out.values.mean() - 1.0) < 0.01

    def test_dropout_rate_range(self):
        with pytest.raises(ValidationError):
            ad.dropout(Tensor(np.ones(2)), 1.0, RngStream(0), training=True)


class TestBackward:
    def test_backward_needs_scalar(self):
        with Tape():
            x = ad.parameter(np.ones(3))
            y = x * 2.0
        with pytest.raises(ShapeError):
            ad.backward(y)

    def test_untracked_root(self):
        with pytest.raises(ValidationError):
            ad.backward(Tensor(np.asarray(1.0)))

    def test_natural_seed_reproduces_backward(self):
        with Tape():
            x = ad.parameter(_random((2, 3), 17))
            w = ad.parameter(_random((3, 2), 18))
            hidden = ad.tanh(ad.matmul(x, w))
            loss = ad.sum(hidden * hidden)
        full = ad.backward(loss)
        partial = ad.backward_from(hidden, full[hidden])
        for leaf in (x, w):
            np.testing.assert_array_equal(full[leaf], partial[leaf])

    def test_seed_linearity(self):
        with Tape():
            x = ad.parameter(_random((3,), 19))
            h = ad.sigmoid(x)
        seed = _random((3,), 20)
        once = ad.backward_from(h, seed)[x]
        twice = ad.backward_from(h, 2.0 * seed)[x]
        np.testing.assert_array_equal(twice, 2.0 * once)

    def test_seed_shape_checked(self):
        with Tape():
            x = ad.parameter(np.ones(3))
            h = x * 2.0
        with pytest.raises(ShapeError):
            ad.backward_from(h, np.ones(2))

    def test_constants_receive_no_gradient(self):
        with Tape():
            x = ad.parameter(np.ones(2))
            c = ad.constant(np.array([3.0, 4.0]))
            loss = ad.sum(x * c)
        store = ad.backward(loss)
        assert c not in store
        np.testing.assert_array_equal(store[x], [3.0, 4.0])

    def test_foreign_tensor_is_adopted_as_constant(self):
        with Tape():
            outside = ad.parameter(np.ones(2))
        with Tape():
            x = ad.parameter(np.ones(2))
            loss = ad.sum(x * outside)
        store = ad.backward(loss)
        np.testing.assert_array_equal(store[x], [1.0, 1.0])

    def test_replay_is_bit_exact(self):
        with Tape() as tape:
            x = ad.parameter(_random((2, 4), 21))
            y = ad.log_softmax(ad.matmul(x, ad.constant(_random((4, 3), 22))), axis=-1)
            ad.sum(ad.dropout(y, 0.3, RngStream(1), training=True))
        assert tape.replay()
