"""ADAM in ascent orientation, as an immutable state plus a pure step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.step < 0:
            raise ContractError("step must be non-negative")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ContractError("learning_rate and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in (0, 1)")
        if np.shape(self.first_moment) != np.shape(self.second_moment):
            raise ContractError("moment vectors differ in length")

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(0, np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, vector, grad):
    """Move ``vector`` uphill along ``grad``; returns ``(new_vector, new_state)``."""
    vector = np.asarray(vector, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if vector.shape != grad.shape or vector.shape != state.first_moment.shape:
        raise ContractError(
            f"shape mismatch: vector {vector.shape}, grad {grad.shape}, "
            f"state {state.first_moment.shape}")
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_vector = vector + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(t, m, v, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return new_vector, new_state
