"""ADAM update with bias correction, in functional form."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamParams:
    step_size: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x):
        return cls(m=np.zeros_like(x), v=np.zeros_like(x), t=0)


def adam_step(x, grad, state, params=AdamParams()):
    """One descent step; returns (updated x, updated state)."""
    if grad.shape != x.shape or state.m.shape != x.shape:
        raise ValueError("shape mismatch between x, grad and state")
    t = state.t + 1
    m = params.beta1 * state.m + (1.0 - params.beta1) * grad
    v = params.beta2 * state.v + (1.0 - params.beta2) * grad * grad
    m_hat = m / (1.0 - params.beta1 ** t)
    v_hat = v / (1.0 - params.beta2 ** t)
    x_new = x - params.step_size * m_hat / (np.sqrt(v_hat) + params.eps)
    return x_new, AdamState(m=m, v=v, t=t)
