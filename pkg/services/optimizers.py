"""
Parameter update rules.

Adam drives the classification groups and plain SGD drives the variance
head. Both are pure: they return new parameter arrays and a new state
instead of mutating their inputs.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from models.errors import NumericalFaultError, ValidationError

logger = logging.getLogger(__name__)

OPTIMIZER_KINDS = ("adam", "sgd")


@dataclass
class OptimizerHyper:
    """
    Optimizer hyperparameters.

    Attributes:
        lr: Step size
        beta1: First-moment decay (adam)
        beta2: Second-moment decay (adam)
        epsilon: Denominator guard (adam)
    """
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class OptimizerState:
    """
    Running optimizer state for one set of parameters.

    Attributes:
        kind: "adam" or "sgd"
        step: Updates applied so far
        first_moment: Adam m per parameter name
        second_moment: Adam v per parameter name
    """
    kind: str
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "step": self.step,
            "first_moment": {k: v.tolist() for k, v in sorted(self.first_moment.items())},
            "second_moment": {k: v.tolist() for k, v in sorted(self.second_moment.items())},
        }


def optimizer_step(
    kind: str,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: Optional[OptimizerState],
    hyper: OptimizerHyper,
) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    Apply one update.

    Args:
        kind: "adam" or "sgd"
        params: Parameter arrays by name
        grads: Gradient for every name in ``params``
        state: State from the previous step (None on the first step)
        hyper: Rates and decays

    Returns:
        Tuple of (updated parameters, updated state)
    """
    if kind not in OPTIMIZER_KINDS:
        raise ValidationError(f"unknown optimizer '{kind}'")
    if state is None:
        state = OptimizerState(kind=kind)
    elif state.kind != kind:
        raise ValidationError(f"optimizer state belongs to '{state.kind}', not '{kind}'")

    for name, value in params.items():
        if name not in grads:
            raise ValidationError(f"parameter '{name}' has no gradient")
        gradient = grads[name]
        if gradient.shape != value.shape:
            raise ValidationError(f"gradient for '{name}' has shape {gradient.shape}, expected {value.shape}")
        if not np.all(np.isfinite(gradient)):
            raise NumericalFaultError(f"gradient for '{name}' is not finite")

    step = state.step + 1
    if kind == "sgd":
        updated = {name: value - hyper.lr * grads[name] for name, value in params.items()}
        return updated, OptimizerState(kind=kind, step=step)

    first_moment: Dict[str, np.ndarray] = {}
    second_moment: Dict[str, np.ndarray] = {}
    updated = {}
    bias1 = 1.0 - hyper.beta1 ** step
    bias2 = 1.0 - hyper.beta2 ** step
    for name, value in params.items():
        gradient = grads[name]
        m = hyper.beta1 * state.first_moment.get(name, np.zeros_like(value)) + (1.0 - hyper.beta1) * gradient
        v = hyper.beta2 * state.second_moment.get(name, np.zeros_like(value)) + (1.0 - hyper.beta2) * gradient * gradient
        m_hat = m / bias1
        v_hat = v / bias2
        updated[name] = value - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
        first_moment[name] = m
        second_moment[name] = v
    return updated, OptimizerState(kind=kind, step=step, first_moment=first_moment, second_moment=second_moment)
