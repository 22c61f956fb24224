"""Adam with an L2 penalty gradient."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from sxextract.core.errors import NumericalError
from sxextract.nn.value import Value

__all__ = ["OptimizerState", "adam_step", "Adam"]


@dataclass
class OptimizerState:
    """Adam hyperparameters plus per-parameter moment accumulators."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_coeff: float = 0.0
    step_count: int = 0
    first_moments: dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Value], state: OptimizerState) -> OptimizerState:
    """Apply one bias-corrected Adam update in place.

    The L2 term ``l2_coeff * theta`` is added to each gradient before the
    moment update. A missing gradient counts as zero. Any non-finite gradient
    aborts the whole update before a single parameter changes.
    """
    grads: dict[str, np.ndarray] = {}
    for name, param in params.items():
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for parameter {name}", parameter=name)
        grads[name] = grad

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, param in params.items():
        grad = grads[name]
        if state.l2_coeff:
            grad = grad + state.l2_coeff * param.data
        m = state.first_moments.get(name)
        v = state.second_moments.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moments[name] = m
        state.second_moments[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(param.data.dtype)
    return state


class Adam:
    """Stateful wrapper binding a parameter dict to an :class:`OptimizerState`."""

    def __init__(self, params: Mapping[str, Value], learning_rate: float, l2: float = 0.0) -> None:
        self.params = dict(params)
        self.state = OptimizerState(learning_rate=learning_rate, l2_coeff=l2)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
