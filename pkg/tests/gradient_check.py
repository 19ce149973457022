"""Central finite-difference checks for the autodiff engine."""

from typing import Callable, List, Sequence

import numpy as np

from services import autodiff as ad
from services.autodiff import Tape, Tensor


def _weighted_loss(build: Callable[..., Tensor], arrays: Sequence[np.ndarray], cotangent: np.ndarray) -> float:
    out = build(*(Tensor(a) for a in arrays))
    return float(np.sum(out.values * cotangent))


def numeric_gradients(build: Callable[..., Tensor], arrays: Sequence[np.ndarray], cotangent: np.ndarray,
                      eps: float = 1e-6) -> List[np.ndarray]:
    grads = []
    for index, array in enumerate(arrays):
        grad = np.zeros_like(array)
        for position in np.ndindex(array.shape):
            shifted = [a.copy() for a in arrays]
            shifted[index][position] += eps
            upper = _weighted_loss(build, shifted, cotangent)
            shifted[index][position] -= 2 * eps
            lower = _weighted_loss(build, shifted, cotangent)
            grad[position] = (upper - lower) / (2 * eps)
        grads.append(grad)
    return grads


def analytic_gradients(build: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                       cotangent: np.ndarray) -> List[np.ndarray]:
    with Tape():
        leaves = [ad.parameter(a.copy()) for a in arrays]
        out = build(*leaves)
        loss = ad.sum(out * ad.constant(cotangent))
    store = ad.backward(loss)
    return [store.get_or_zeros(leaf) for leaf in leaves]


def assert_gradients_match(build: Callable[..., Tensor], arrays: Sequence[np.ndarray], seed: int = 0,
                           rtol: float = 1e-4, atol: float = 1e-6):
    """Compare tape gradients of sum(build(*arrays) * cotangent) with central differences."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    out_shape = build(*(Tensor(a) for a in arrays)).shape
    cotangent = np.random.default_rng(seed).normal(size=out_shape)
    for analytic, numeric in zip(analytic_gradients(build, arrays, cotangent),
                                 numeric_gradients(build, arrays, cotangent)):
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)
