"""
Toy multimodal attention classifier.

Pipeline per example: a shared per-cell encoder turns the grid into cell
embeddings g_i, a gated recurrent cell turns the question into g_q, the
attention network scores every cell against g_q and pools the cell
embeddings into the attended feature f_i = [pooled, g_q], and the classifier
trunk (with dropout) feeds a logit head and a variance head.

Every function is batched over a leading axis B.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.data_models import Example, ModelConfig, ModelParams, PARAM_GROUPS
from models.errors import ShapeError, ValidationError
from services import autodiff as ad
from services.autodiff import RngStream, Tensor

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """
    Examples stacked into arrays.

    Attributes:
        grids: Cell features, shape (B, u, v, d)
        questions: Token ids padded with 0, shape (B, L)
        lengths: True question lengths, shape (B,)
        answers: Answer classes, shape (B,)
        gt_attention: Planted attention, shape (B, u, v)
        noisy: Label-noise flags, shape (B,)
        example_ids: Identifiers in batch order
    """
    grids: np.ndarray
    questions: np.ndarray
    lengths: np.ndarray
    answers: np.ndarray
    gt_attention: np.ndarray
    noisy: np.ndarray
    example_ids: List[str]

    def __len__(self) -> int:
        return int(self.grids.shape[0])


def make_batch(examples: Sequence[Example], config: ModelConfig) -> Batch:
    """Stack examples, checking them against the architecture."""
    if not examples:
        raise ValidationError("batch must contain at least one example")
    expected = (config.grid_rows, config.grid_cols, config.feature_width)
    questions = np.zeros((len(examples), config.max_question_length), dtype=np.int64)
    lengths = np.zeros(len(examples), dtype=np.int64)
    for row, example in enumerate(examples):
        if example.grid.shape != expected:
            raise ShapeError(f"example {example.example_id}: grid shape {example.grid.shape}, expected {expected}")
        if not example.question:
            raise ValidationError(f"example {example.example_id}: question is empty")
        if len(example.question) > config.max_question_length:
            raise ValidationError(
                f"example {example.example_id}: question has {len(example.question)} tokens, "
                f"limit is {config.max_question_length}"
            )
        questions[row, :len(example.question)] = example.question
        lengths[row] = len(example.question)
    return Batch(
        grids=np.stack([e.grid for e in examples]).astype(np.float64),
        questions=questions,
        lengths=lengths,
        answers=np.array([e.answer for e in examples], dtype=np.int64),
        gt_attention=np.stack([e.gt_attention for e in examples]).astype(np.float64),
        noisy=np.array([e.noisy for e in examples], dtype=bool),
        example_ids=[e.example_id for e in examples],
    )


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------

def parameter_shapes(config: ModelConfig) -> Dict[str, Dict[str, Tuple[Tuple[int, ...], int]]]:
    """Shape and fan-in of every parameter, by group."""
    d, h, c, v = config.feature_width, config.hidden_size, config.num_classes, config.vocab_size
    return {
        "image": {"W": ((d, h), d), "b": ((h,), d)},
        "question": {
            "embedding": ((v, h), 1),
            "W_z": ((h, h), h), "U_z": ((h, h), h), "b_z": ((h,), h),
            "W_c": ((h, h), h), "U_c": ((h, h), h), "b_c": ((h,), h),
        },
        "attention": {"W_a": ((h, h), h), "W_b": ((h, h), h), "b_a": ((h,), h), "w": ((h, 1), h)},
        "trunk": {"W": ((2 * h, h), 2 * h), "b": ((h,), 2 * h)},
        "logit": {"W": ((h, c), h), "b": ((c,), h)},
        "variance": {"W": ((h, c), h), "b": ((c,), h)},
    }


def init_params(config: ModelConfig, rng: RngStream) -> ModelParams:
    """Uniform initialization in [-s, s] with s = 1/sqrt(fan-in), in a fixed draw order."""
    groups: Dict[str, Dict[str, np.ndarray]] = {}
    for group, shapes in parameter_shapes(config).items():
        groups[group] = {}
        for name in sorted(shapes):
            shape, fan_in = shapes[name]
            bound = 1.0 / np.sqrt(fan_in)
            groups[group][name] = rng.uniform(shape, -bound, bound)
    return ModelParams(groups=groups)


def validate_params(params: ModelParams, config: ModelConfig) -> None:
    """Raise ShapeError unless every parameter exists with its architectural shape."""
    shapes = parameter_shapes(config)
    for group in PARAM_GROUPS:
        present = params.groups.get(group, {})
        for name, (shape, _) in shapes[group].items():
            if name not in present:
                raise ShapeError(f"parameter {group}.{name} is missing")
            if present[name].shape != shape:
                raise ShapeError(f"parameter {group}.{name} has shape {present[name].shape}, expected {shape}")
            if not np.all(np.isfinite(present[name])):
                raise ValidationError(f"parameter {group}.{name} is not finite")
        extra = set(present) - set(shapes[group])
        if extra:
            raise ShapeError(f"unexpected parameters in group {group}: {', '.join(sorted(extra))}")


# ----------------------------------------------------------------------------
# Network pieces
# ----------------------------------------------------------------------------

def _affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    product = ad.matmul(x, weight)
    row = ad.reshape(bias, (1,) + bias.shape)
    return product + ad.broadcast_to(row, product.shape)


def _leaves(params: ModelParams, group: str) -> Dict[str, Tensor]:
    return {name: ad.parameter(value) for name, value in sorted(params.groups[group].items())}


def encode_image(grids: np.ndarray, image: Dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Shared affine + tanh per cell: (B, u, v, d) -> (B, u, v, h)."""
    grids = np.asarray(grids, dtype=np.float64)
    expected = (config.grid_rows, config.grid_cols, config.feature_width)
    if grids.ndim != 4 or grids.shape[1:] != expected:
        raise ShapeError(f"grid batch has shape {grids.shape}, expected (B,) + {expected}")
    batch = grids.shape[0]
    cells = ad.constant(grids.reshape(batch * config.num_cells, config.feature_width))
    embedded = ad.tanh(_affine(cells, image["W"], image["b"]))
    h = image["W"].shape[1]
    return ad.reshape(embedded, (batch, config.grid_rows, config.grid_cols, h))


def encode_question(questions: np.ndarray, lengths: np.ndarray, question: Dict[str, Tensor]) -> Tensor:
    """
    Embedding lookup followed by a left-to-right gated recurrent cell.

    z = sigmoid(x W_z + s U_z + b_z), c = tanh(x W_c + s U_c + b_c),
    s' = (1 - z) * s + z * c. Positions past a question's length leave its
    state unchanged; the final state is g_q, shape (B, h).
    """
    questions = np.asarray(questions, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if questions.ndim != 2:
        raise ShapeError(f"question batch must be 2-D, got shape {questions.shape}")
    if np.any(lengths < 1):
        raise ValidationError("questions must contain at least one token")
    vocab = question["embedding"].shape[0]
    if np.any(questions >= vocab) or np.any(questions < 0):
        raise ValidationError(f"token ids must lie in [0, {vocab})")
    batch = questions.shape[0]
    h = question["embedding"].shape[1]
    state = ad.constant(np.zeros((batch, h)))
    for position in range(int(lengths.max())):
        x = ad.embedding(question["embedding"], questions[:, position])
        gate = ad.sigmoid(_affine(x, question["W_z"], question["b_z"]) + ad.matmul(state, question["U_z"]))
        candidate = ad.tanh(_affine(x, question["W_c"], question["b_c"]) + ad.matmul(state, question["U_c"]))
        updated = (1.0 - gate) * state + gate * candidate
        active = np.broadcast_to((position < lengths)[:, None], (batch, h))
        state = ad.where(active, updated, state)
    return state


def attend(g_i: Tensor, g_q: Tensor, attention: Dict[str, Tensor]) -> Tuple[Tensor, Tensor]:
    """
    Score cells against the question and pool.

    score = wᵀ tanh(W_a g_cell + W_b g_q + b_a), softmax over all u·v cells.

    Returns:
        Tuple of (attention weights (B, u·v), f_i (B, 2h))
    """
    if len(g_i.shape) != 4:
        raise ShapeError(f"cell embeddings must be (B, u, v, h), got {g_i.shape}")
    batch, rows, cols, h = g_i.shape
    if g_q.shape != (batch, h) or attention["W_a"].shape[0] != h:
        raise ShapeError(f"embedding widths disagree: cells {g_i.shape}, question {g_q.shape}")
    cells = rows * cols
    flat = ad.reshape(g_i, (batch * cells, h))
    projected_cells = ad.matmul(flat, attention["W_a"])
    projected_question = ad.matmul(g_q, attention["W_b"])
    repeated = ad.broadcast_to(ad.reshape(projected_question, (batch, 1, h)), (batch, cells, h))
    bias = ad.broadcast_to(ad.reshape(attention["b_a"], (1, h)), (batch * cells, h))
    hidden = ad.tanh(projected_cells + ad.reshape(repeated, (batch * cells, h)) + bias)
    scores = ad.reshape(ad.matmul(hidden, attention["w"]), (batch, cells))
    weights = ad.softmax(scores, axis=1)

    spread = ad.broadcast_to(ad.reshape(weights, (batch, cells, 1)), (batch, cells, h))
    pooled = ad.sum(spread * ad.reshape(flat, (batch, cells, h)), axis=1)
    f_i = ad.concat([pooled, g_q], axis=1)
    return weights, f_i


def classify(f_i: Tensor, params, dropout_rate: float, rng: Optional[RngStream],
             training: bool) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Classifier trunk and both heads.

    trunk = dropout(relu(affine(f_i))); logits and raw variance are affine
    maps of the trunk. ``params`` is a ModelParams or a dict of leaf tensors
    per group.

    Returns:
        Tuple of (trunk, logits, raw_variance)
    """
    leaves = params if isinstance(params, dict) else {
        group: _leaves(params, group) for group in ("trunk", "logit", "variance")
    }
    trunk_w = leaves["trunk"]["W"]
    if len(f_i.shape) != 2 or f_i.shape[1] != trunk_w.shape[0]:
        raise ShapeError(f"f_i width {f_i.shape} does not match trunk input {trunk_w.shape[0]}")
    if training and dropout_rate > 0 and rng is None:
        raise ValidationError("dropout needs an RngStream")
    trunk = ad.relu(_affine(f_i, trunk_w, leaves["trunk"]["b"]))
    trunk = ad.dropout(trunk, dropout_rate, rng, training)
    logits = _affine(trunk, leaves["logit"]["W"], leaves["logit"]["b"])
    raw_variance = _affine(trunk, leaves["variance"]["W"], leaves["variance"]["b"])
    return trunk, logits, raw_variance


@dataclass
class ForwardTrace:
    """
    Everything one forward pass produced.

    Attributes:
        g_i: Cell embeddings (B, u, v, h)
        g_q: Question embedding (B, h)
        attention_weights: Cell weights as a tensor (B, u·v); gradient tap for certainty maps
        attention: Cell weights as arrays (B, u, v)
        f_i: Attended feature (B, 2h); gradient tap for the certainty rule
        trunk: Classifier trunk activation (B, h)
        logits: Class scores (B, C)
        raw_variance: Variance head output before softplus (B, C)
        leaves: Parameter leaf tensors by group and name
    """
    g_i: Tensor
    g_q: Tensor
    attention_weights: Tensor
    attention: np.ndarray
    f_i: Tensor
    trunk: Tensor
    logits: Tensor
    raw_variance: Tensor
    leaves: Dict[str, Dict[str, Tensor]]

    def leaf_items(self):
        """(flat name, leaf tensor) pairs in ModelParams.flat() order."""
        for group in PARAM_GROUPS:
            for name, tensor in sorted(self.leaves[group].items()):
                yield f"{group}.{name}", tensor


def forward(batch: Batch, params: ModelParams, config: ModelConfig, rng: Optional[RngStream],
            training: bool, dropout_rate: float) -> ForwardTrace:
    """Run the full pipeline on a batch. Under an active tape every node is recorded."""
    leaves = {group: _leaves(params, group) for group in PARAM_GROUPS}
    g_i = encode_image(batch.grids, leaves["image"], config)
    g_q = encode_question(batch.questions, batch.lengths, leaves["question"])
    weights, f_i = attend(g_i, g_q, leaves["attention"])
    trunk, logits, raw_variance = classify(f_i, leaves, dropout_rate, rng, training)
    return ForwardTrace(
        g_i=g_i,
        g_q=g_q,
        attention_weights=weights,
        attention=weights.values.reshape(len(batch), config.grid_rows, config.grid_cols),
        f_i=f_i,
        trunk=trunk,
        logits=logits,
        raw_variance=raw_variance,
        leaves=leaves,
    )


def predict(batch: Batch, params: ModelParams, config: ModelConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic predictions and attention maps (dropout off)."""
    trace = forward(batch, params, config, None, training=False, dropout_rate=0.0)
    return np.argmax(trace.logits.values, axis=1), trace.attention
