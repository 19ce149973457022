import numpy as np
import pytest

from models.errors import NumericalFaultError, ValidationError
from services.optimizers import OptimizerHyper, optimizer_step


class TestSGD:
    def test_plain_step(self):
        params = {"w": np.array([1.0, 2.0])}
        updated, state = optimizer_step("sgd", params, {"w": np.array([0.5, -1.0])}, None, OptimizerHyper(lr=0.1))
        np.testing.assert_allclose(updated["w"], [0.95, 2.1])
        assert state.step == 1

    def test_descends_a_quadratic(self):
        params, state, values = {"x": np.array([1.0])}, None, []
        for _ in range(20):
            params, state = optimizer_step("sgd", params, {"x": 2.0 * params["x"]}, state, OptimizerHyper(lr=0.1))
            values.append(float(params["x"][0] ** 2))
        assert all(later < earlier for earlier, later in zip(values, values[1:]))
        assert values[-1] < 1e-3

    def test_inputs_are_not_mutated(self):
        params = {"w": np.array([1.0])}
        optimizer_step("sgd", params, {"w": np.array([1.0])}, None, OptimizerHyper(lr=0.5))
        np.testing.assert_array_equal(params["w"], [1.0])


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        # bias correction makes the first step lr * sign(g)
        params = {"w": np.array([0.0, 0.0])}
        grads = {"w": np.array([3.0, -0.2])}
        updated, state = optimizer_step("adam", params, grads, None, OptimizerHyper(lr=0.01))
        np.testing.assert_allclose(updated["w"], [-0.01, 0.01], rtol=1e-6)
        np.testing.assert_allclose(state.first_moment["w"], 0.1 * grads["w"])
        np.testing.assert_allclose(state.second_moment["w"], 0.001 * grads["w"] ** 2)

    def test_second_step_uses_state(self):
        hyper = OptimizerHyper(lr=0.1, beta1=0.95, beta2=0.99, epsilon=1e-8)
        params = {"w": np.array([1.0])}
        g1, g2 = np.array([1.0]), np.array([2.0])
        p1, s1 = optimizer_step("adam", params, {"w": g1}, None, hyper)
        p2, s2 = optimizer_step("adam", p1, {"w": g2}, s1, hyper)
        m = 0.95 * 0.05 * 1.0 + 0.05 * 2.0
        v = 0.99 * 0.01 * 1.0 + 0.01 * 4.0
        expected = p1["w"] - 0.1 * (m / (1 - 0.95 ** 2)) / (np.sqrt(v / (1 - 0.99 ** 2)) + 1e-8)
        np.testing.assert_allclose(p2["w"], expected, rtol=1e-12)
        assert s2.step == 2

    def test_minimizes_a_quadratic(self):
        params, state = {"x": np.array([1.0])}, None
        for _ in range(500):
            params, state = optimizer_step("adam", params, {"x": 2.0 * params["x"]}, state, OptimizerHyper(lr=0.01))
        assert abs(params["x"][0]) < 0.05
        assert state.step == 500

    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([0.5, -2.0]), "b": np.array([[1.0]])}
        grads = {"w": np.zeros(2), "b": np.zeros((1, 1))}
        updated, _ = optimizer_step("adam", params, grads, None, OptimizerHyper(lr=0.01))
        for name, value in params.items():
            np.testing.assert_array_equal(updated[name], value)

    def test_state_kind_mismatch(self):
        _, sgd_state = optimizer_step("sgd", {"w": np.ones(1)}, {"w": np.ones(1)}, None, OptimizerHyper(lr=0.1))
        with pytest.raises(ValidationError):
            optimizer_step("adam", {"w": np.ones(1)}, {"w": np.ones(1)}, sgd_state, OptimizerHyper(lr=0.1))


class TestValidation:
    def test_missing_gradient(self):
        with pytest.raises(ValidationError):
            optimizer_step("sgd", {"w": np.ones(2)}, {}, None, OptimizerHyper(lr=0.1))

    def test_gradient_shape(self):
        with pytest.raises(ValidationError):
            optimizer_step("sgd", {"w": np.ones(2)}, {"w": np.ones(3)}, None, OptimizerHyper(lr=0.1))

    def test_non_finite_gradient(self):
        with pytest.raises(NumericalFaultError):
            optimizer_step("adam", {"w": np.ones(2)}, {"w": np.array([1.0, np.nan])}, None, OptimizerHyper(lr=0.1))

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            optimizer_step("rmsprop", {}, {}, None, OptimizerHyper(lr=0.1))
