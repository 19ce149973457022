"""
Reverse-mode differentiation over dense float64 arrays.

A ``Tape`` records every primitive operation executed while it is active
(define-by-run). ``backward`` walks the tape in reverse from a scalar root;
``backward_from`` starts the walk at an arbitrary node with a caller-supplied
gradient, which is how a modified gradient is injected at the attention
feature and carried on into the parameters upstream of it.

A tape and its tensors belong to one worker: the active tape is held in a
context variable, so threads never see each other's tapes. Tensors from a
sealed tape can be read anywhere and are adopted as constants when used
under another tape.
"""

import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from models.errors import NumericalFaultError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)

_UINT64_MASK = (1 << 64) - 1


# ----------------------------------------------------------------------------
# Random numbers
# ----------------------------------------------------------------------------

class RngStream:
    """
    Deterministic counter-based random stream.

    Backed by numpy's Philox 4x64-10 bit generator keyed with the 128-bit
    value ``(stream << 64) | seed``. Philox output depends only on key and
    counter, so identical seeds and identical draw sequences give identical
    numbers on every platform.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _UINT64_MASK
        self.stream = int(stream) & _UINT64_MASK
        key = (self.stream << 64) | self.seed
        self._generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def counter(self) -> Tuple[int, ...]:
        """Current Philox counter words."""
        return tuple(int(c) for c in self._generator.bit_generator.state["state"]["counter"])

    def fork(self, stream: int) -> "RngStream":
        """Independent stream sharing this seed under another stream key."""
        return RngStream(self.seed, stream)

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return mean + std * self._generator.standard_normal(size=tuple(shape))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, size=tuple(shape))

    def integers(self, low: int, high: int, size=None):
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)


# ----------------------------------------------------------------------------
# Tape and tensors
# ----------------------------------------------------------------------------

@dataclass
class TapeEntry:
    """
    One recorded node.

    Attributes:
        node_id: Position on the tape
        op: Primitive name ("leaf" for inputs)
        inputs: Node ids of the operands
        value: Forward value
        forward: Recomputes the value from operand values (None for leaves)
        vjp: Maps the output gradient to operand gradients (None for leaves)
        requires_grad: Whether gradients flow into this node
    """
    node_id: int
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    forward: Optional[Callable[..., np.ndarray]]
    vjp: Optional[Callable[..., Tuple[Optional[np.ndarray], ...]]]
    requires_grad: bool


class Tape:
    """
    Ordered record of primitive operations.

    Usage:
        with Tape() as tape:
            ...forward computation...
        grads = backward(loss)

    Leaving the ``with`` block seals the tape; recorded values stay readable
    and differentiable but nothing new can be recorded.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.sealed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        self.seal()
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def seal(self):
        self.sealed = True

    def _append(self, entry_factory) -> "Tensor":
        if self.sealed:
            raise ValidationError("cannot record on a sealed tape")
        entry = entry_factory(len(self.entries))
        self.entries.append(entry)
        return Tensor(entry.value, node_id=entry.node_id, tape=self)

    def record_leaf(self, value: np.ndarray, requires_grad: bool = True) -> "Tensor":
        return self._append(lambda node_id: TapeEntry(
            node_id, "leaf", (), value, None, None, requires_grad
        ))

    def record(self, op: str, inputs: Tuple[int, ...], value: np.ndarray,
               forward: Callable, vjp: Callable) -> "Tensor":
        requires_grad = any(self.entries[i].requires_grad for i in inputs)
        return self._append(lambda node_id: TapeEntry(
            node_id, op, inputs, value, forward, vjp, requires_grad
        ))

    def adopt(self, tensor: "Tensor") -> int:
        """Node id of ``tensor`` on this tape, recording foreign tensors as constants."""
        if tensor.tape is self and tensor.node_id is not None:
            return tensor.node_id
        return self.record_leaf(tensor.values, requires_grad=False).node_id

    def replay(self) -> bool:
        """
        Recompute every node from the recorded leaves.

        Returns:
            True when every recomputed value equals the recorded value bit for bit
        """
        recomputed: List[np.ndarray] = []
        identical = True
        for entry in self.entries:
            if entry.forward is None:
                value = entry.value
            else:
                value = entry.forward(*(recomputed[i] for i in entry.inputs))
                if value.shape != entry.value.shape or not np.array_equal(value, entry.value):
                    identical = False
                    logger.debug("Replay mismatch at node %d (%s)", entry.node_id, entry.op)
            recomputed.append(value)
        return identical


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


class Tensor:
    """
    Dense float64 array, optionally bound to a node on a tape.

    Attributes:
        values: The array (row-major)
        node_id: Node handle on ``tape`` (None for untracked tensors)
        tape: Owning tape
    """

    __slots__ = ("values", "node_id", "tape")
    __array_priority__ = 100

    def __init__(self, values: np.ndarray, node_id: Optional[int] = None, tape: Optional[Tape] = None):
        self.values = values
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node_id})"

    def __add__(self, other):
        return elementwise("add", self, _coerce(other, self))

    def __radd__(self, other):
        return elementwise("add", _coerce(other, self), self)

    def __sub__(self, other):
        return elementwise("subtract", self, _coerce(other, self))

    def __rsub__(self, other):
        return elementwise("subtract", _coerce(other, self), self)

    def __mul__(self, other):
        return elementwise("multiply", self, _coerce(other, self))

    def __rmul__(self, other):
        return elementwise("multiply", _coerce(other, self), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor / tensor is not supported; multiply by a reciprocal instead")
        return elementwise("multiply", self, _coerce(1.0 / float(other), self))

    def __neg__(self):
        return elementwise("negate", self)

    def __matmul__(self, other):
        return matmul(self, other)


TensorLike = Union[Tensor, float, int]


def _coerce(value: TensorLike, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(np.full(like.shape, float(value)))


def _check_finite(op: str, value: np.ndarray):
    if not np.all(np.isfinite(value)):
        raise NumericalFaultError(f"operation '{op}' produced non-finite values")


def _apply(op: str, inputs: Sequence[Tensor], forward: Callable, vjp: Callable) -> Tensor:
    value = forward(*(t.values for t in inputs))
    _check_finite(op, value)
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor(value)
    ids = tuple(tape.adopt(t) for t in inputs)
    return tape.record(op, ids, value, forward, vjp)


# ----------------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------------

def build_tensor(shape: Sequence[int], values=None, fill: str = "zeros", constant_value: float = 0.0,
                 rng: Optional[RngStream] = None, mean: float = 0.0, std: float = 1.0,
                 requires_grad: bool = True) -> Tensor:
    """
    Create a leaf tensor on the active tape.

    Args:
        shape: Extents (empty for a scalar)
        values: Explicit values in row-major order; overrides ``fill``
        fill: "zeros", "constant" or "gaussian" when no values are given
        constant_value: Fill value for "constant"
        rng: Stream for "gaussian"
        mean, std: Gaussian parameters
        requires_grad: Whether gradients are tracked for this leaf

    Returns:
        Tensor registered as a leaf (untracked when no tape is active)
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    count = int(np.prod(shape)) if shape else 1
    if values is not None:
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size != count:
            raise ShapeError(f"{flat.size} values do not fill shape {shape} ({count} values)")
        if not np.all(np.isfinite(flat)):
            raise ValidationError("explicit tensor values must be finite")
        array = flat.reshape(shape).copy()
    elif fill == "zeros":
        array = np.zeros(shape)
    elif fill == "constant":
        array = np.full(shape, float(constant_value))
    elif fill == "gaussian":
        if rng is None:
            raise ValidationError("gaussian fill needs an RngStream")
        array = rng.normal(shape, mean, std)
    else:
        raise ValidationError(f"unknown fill rule '{fill}'")
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor(array)
    return tape.record_leaf(array, requires_grad=requires_grad)


def constant(values) -> Tensor:
    """Leaf that never receives gradients."""
    array = np.asarray(values, dtype=np.float64)
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor(array)
    return tape.record_leaf(array, requires_grad=False)


def parameter(values: np.ndarray) -> Tensor:
    """Leaf that receives gradients, wrapping an existing array without copying."""
    array = np.asarray(values, dtype=np.float64)
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return Tensor(array)
    return tape.record_leaf(array, requires_grad=True)


# ----------------------------------------------------------------------------
# Elementwise primitives
# ----------------------------------------------------------------------------

def _relu_vjp(g, out, x):
    return (g * (x > 0),)


def _softplus_vjp(g, out, x):
    return (g * expit(x),)


def _tanh_vjp(g, out, x):
    return (g * (1.0 - out * out),)


def _exp_vjp(g, out, x):
    return (g * out,)


def _log_vjp(g, out, x):
    return (g / x,)


def _negate_vjp(g, out, x):
    return (-g,)


def _sigmoid_vjp(g, out, x):
    return (g * out * (1.0 - out),)


def _sqrt_vjp(g, out, x):
    return (g * 0.5 / out,)


def _square_vjp(g, out, x):
    return (g * 2.0 * x,)


_UNARY = {
    "relu": (lambda x: np.maximum(x, 0.0), _relu_vjp),
    "softplus": (lambda x: np.logaddexp(0.0, x), _softplus_vjp),
    "tanh": (np.tanh, _tanh_vjp),
    "exponential": (np.exp, _exp_vjp),
    "logarithm": (np.log, _log_vjp),
    "negate": (np.negative, _negate_vjp),
    "sigmoid": (expit, _sigmoid_vjp),
    "sqrt": (np.sqrt, _sqrt_vjp),
    "square": (np.square, _square_vjp),
}

_BINARY = {
    "add": (np.add, lambda g, out, a, b: (g, g)),
    "subtract": (np.subtract, lambda g, out, a, b: (g, -g)),
    "multiply": (np.multiply, lambda g, out, a, b: (g * b, g * a)),
}


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Apply an elementwise primitive.

    Binary kinds (add, subtract, multiply) need equal shapes. Unary kinds:
    relu, softplus, tanh, exponential, logarithm, negate, sigmoid, sqrt,
    square. softplus is evaluated as logaddexp(0, x), which never overflows.
    """
    if kind in _BINARY:
        if b is None:
            raise ValidationError(f"'{kind}' needs two operands")
        if a.shape != b.shape:
            raise ShapeError(f"'{kind}' operands differ in shape: {a.shape} vs {b.shape}")
        forward, vjp = _BINARY[kind]
        return _apply(kind, (a, b), forward, vjp)
    if kind in _UNARY:
        if kind == "logarithm" and np.any(a.values <= 0):
            raise ValidationError("logarithm needs strictly positive inputs")
        if kind == "sqrt" and np.any(a.values < 0):
            raise ValidationError("sqrt needs nonnegative inputs")
        forward, vjp = _UNARY[kind]
        return _apply(kind, (a,), forward, vjp)
    raise ValidationError(f"unknown elementwise kind '{kind}'")


def relu(x: Tensor) -> Tensor:
    return elementwise("relu", x)


def softplus(x: Tensor) -> Tensor:
    return elementwise("softplus", x)


def tanh(x: Tensor) -> Tensor:
    return elementwise("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def exp(x: Tensor) -> Tensor:
    return elementwise("exponential", x)


def log(x: Tensor) -> Tensor:
    return elementwise("logarithm", x)


def sqrt(x: Tensor) -> Tensor:
    return elementwise("sqrt", x)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` holds and ``b`` elsewhere; the mask is constant."""
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or mask.shape != a.shape:
        raise ShapeError(f"where needs equal shapes, got {mask.shape}, {a.shape}, {b.shape}")
    return _apply(
        "where", (a, b),
        lambda x, y: np.where(mask, x, y),
        lambda g, out, x, y: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
    )


# ----------------------------------------------------------------------------
# Linear algebra, reductions and shape primitives
# ----------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of [m, k] and [k, n]."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    return _apply(
        "matmul", (a, b),
        np.matmul,
        lambda g, out, x, y: (g @ y.T, x.T @ g),
    )


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValidationError(f"axis {axis} is out of range for {ndim} dimensions")
    return axis % ndim


def _softmax_values(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _lse_values(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    axis = _normalize_axis(axis, len(x.shape))

    def vjp(g, out, values):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _apply("softmax", (x,), lambda values: _softmax_values(values, axis), vjp)


def log_sum_exp(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log Σ exp along ``axis``; the axis is removed."""
    axis = _normalize_axis(axis, len(x.shape))

    def vjp(g, out, values):
        return (np.expand_dims(g, axis) * _softmax_values(values, axis),)

    return _apply("log_sum_exp", (x,), lambda values: _lse_values(values, axis), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _normalize_axis(axis, len(x.shape))

    def forward(values):
        return values - np.expand_dims(_lse_values(values, axis), axis)

    def vjp(g, out, values):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _apply("log_softmax", (x,), forward, vjp)


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    if axis is None:
        return _apply(
            "sum", (x,),
            lambda values: np.asarray(np.sum(values)),
            lambda g, out, values: (np.broadcast_to(g, values.shape).copy(),),
        )
    axis = _normalize_axis(axis, len(x.shape))
    return _apply(
        "sum", (x,),
        lambda values: np.sum(values, axis=axis),
        lambda g, out, values: (np.broadcast_to(np.expand_dims(g, axis), values.shape).copy(),),
    )


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[_normalize_axis(axis, len(x.shape))]
    return sum(x, axis) * (1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    return _apply(
        "reshape", (x,),
        lambda values: values.reshape(shape),
        lambda g, out, values: (g.reshape(values.shape),),
    )


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """numpy broadcasting to ``shape``; the gradient sums over broadcast axes."""
    shape = tuple(int(s) for s in shape)
    if len(x.shape) != len(shape):
        raise ShapeError(f"broadcast_to needs equal ranks, got {x.shape} -> {shape}")
    for source, target in zip(x.shape, shape):
        if source not in (1, target):
            raise ShapeError(f"cannot broadcast {x.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s == 1 and t != 1)

    def vjp(g, out, values):
        return (np.sum(g, axis=axes, keepdims=True) if axes else g,)

    return _apply("broadcast_to", (x,), lambda values: np.broadcast_to(values, shape).copy(), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ValidationError("concat needs at least one tensor")
    ndim = len(tensors[0].shape)
    axis = _normalize_axis(axis, ndim)
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if len(t.shape) != ndim or other != first:
            raise ShapeError(f"concat shapes disagree off axis {axis}: {tensors[0].shape} vs {t.shape}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g, out, *values):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", tuple(tensors), lambda *values: np.concatenate(values, axis=axis), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValidationError("stack needs at least one tensor")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError("stack needs equal shapes")
    axis = _normalize_axis(axis, len(shape) + 1)

    def vjp(g, out, *values):
        return tuple(np.take(g, i, axis=axis) for i in range(len(values)))

    return _apply("stack", tuple(tensors), lambda *values: np.stack(values, axis=axis), vjp)


def pick(x: Tensor, indices) -> Tensor:
    """
    Select one entry along the last axis for every leading position.

    ``x`` has shape (..., C) and ``indices`` shape (...); the result has
    shape (...).
    """
    index = np.asarray(indices, dtype=np.int64)
    if index.shape != x.shape[:-1]:
        raise ShapeError(f"pick indices of shape {index.shape} do not match {x.shape[:-1]}")
    if np.any(index < 0) or np.any(index >= x.shape[-1]):
        raise ValidationError(f"pick index out of range [0, {x.shape[-1]})")
    expanded = index[..., None]

    def forward(values):
        return np.take_along_axis(values, expanded, axis=-1)[..., 0]

    def vjp(g, out, values):
        grad = np.zeros_like(values)
        np.put_along_axis(grad, expanded, np.asarray(g)[..., None], axis=-1)
        return (grad,)

    return _apply("pick", (x,), forward, vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` [V, e] for integer ``ids``; result shape ids.shape + (e,)."""
    index = np.asarray(ids, dtype=np.int64)
    if len(table.shape) != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if np.any(index < 0) or np.any(index >= table.shape[0]):
        raise ValidationError(f"token id out of range [0, {table.shape[0]})")

    def vjp(g, out, values):
        grad = np.zeros_like(values)
        np.add.at(grad, index.reshape(-1), g.reshape(-1, values.shape[1]))
        return (grad,)

    return _apply("embedding", (table,), lambda values: values[index], vjp)


def dropout(x: Tensor, rate: float, rng: RngStream, training: bool) -> Tensor:
    """
    Inverted dropout.

    Training: each element is zeroed with probability ``rate`` and the
    survivors are scaled by 1/(1 - rate). Otherwise, and for rate 0, the
    input is returned unchanged.
    """
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    scale = 1.0 / (1.0 - rate)
    mask = (rng.uniform(x.shape) >= rate) * scale
    return _apply(
        "dropout", (x,),
        lambda values: values * mask,
        lambda g, out, values: (g * mask,),
    )


# ----------------------------------------------------------------------------
# Differentiation
# ----------------------------------------------------------------------------

class GradientStore:
    """
    Gradients keyed by node id.

    Every stored gradient has the shape of its node's value. Lookups accept a
    ``Tensor`` or a node id.
    """

    def __init__(self, tape: Tape, gradients: Dict[int, np.ndarray]):
        for node_id, gradient in gradients.items():
            expected = tape.entries[node_id].value.shape
            if gradient.shape != expected:
                raise ShapeError(f"gradient for node {node_id} has shape {gradient.shape}, expected {expected}")
        self.tape = tape
        self._gradients = gradients

    @staticmethod
    def _key(node: Union[Tensor, int]) -> int:
        return node.node_id if isinstance(node, Tensor) else int(node)

    def __contains__(self, node) -> bool:
        return self._key(node) in self._gradients

    def __getitem__(self, node) -> np.ndarray:
        return self._gradients[self._key(node)]

    def __len__(self) -> int:
        return len(self._gradients)

    def __iter__(self) -> Iterator[int]:
        return iter(self._gradients)

    def get(self, node, default=None):
        return self._gradients.get(self._key(node), default)

    def get_or_zeros(self, node: Tensor) -> np.ndarray:
        gradient = self.get(node)
        return np.zeros(node.shape) if gradient is None else gradient


def _propagate(tape: Tape, start_id: int, seed: np.ndarray) -> GradientStore:
    grads: Dict[int, np.ndarray] = {start_id: seed}
    entries = tape.entries
    for entry in reversed(entries[: start_id + 1]):
        g = grads.get(entry.node_id)
        if g is None or entry.vjp is None or not entry.requires_grad:
            continue
        input_values = [entries[i].value for i in entry.inputs]
        input_grads = entry.vjp(g, entry.value, *input_values)
        for input_id, input_grad in zip(entry.inputs, input_grads):
            if input_grad is None or not entries[input_id].requires_grad:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad
    return GradientStore(tape, grads)


def _require_on_tape(node: Tensor) -> Tape:
    if node.tape is None or node.node_id is None:
        raise ValidationError("node is not recorded on a tape")
    return node.tape


def backward(root: Tensor) -> GradientStore:
    """Gradients of a scalar ``root`` with respect to every node it depends on."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    tape = _require_on_tape(root)
    return _propagate(tape, root.node_id, np.ones_like(root.values))


def backward_from(node: Tensor, seed_gradient) -> GradientStore:
    """
    Propagate ``seed_gradient`` from ``node`` to everything upstream of it,
    as if ∂L/∂node were ``seed_gradient``.
    """
    tape = _require_on_tape(node)
    seed = np.asarray(seed_gradient.values if isinstance(seed_gradient, Tensor) else seed_gradient,
                      dtype=np.float64)
    if seed.shape != node.shape:
        raise ShapeError(f"seed gradient shape {seed.shape} differs from node shape {node.shape}")
    return _propagate(tape, node.node_id, seed.copy())
