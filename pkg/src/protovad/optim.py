"""Adam over a named set of gradient slots."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .diffcore import GradSlot
from .errors import ConfigError, NonFiniteError

DEFAULT_LR = 0.005


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, GradSlot], **hyper) -> "AdamState":
        return cls({k: np.zeros_like(s.value) for k, s in params.items()},
                   {k: np.zeros_like(s.value) for k, s in params.items()}, **hyper)


def grad_global_norm(params: Mapping[str, GradSlot]) -> float:
    return float(np.sqrt(sum(float(np.sum(s.grad.astype(np.float64) ** 2)) for s in params.values())))


def clip_grad_norm(params: Mapping[str, GradSlot], max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``max_norm <= 0`` disables clipping.
    """
    norm = grad_global_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for s in params.values():
            s.grad *= s.grad.dtype.type(scale)
    return norm


class Adam:
    """Bias-corrected Adam without weight decay or schedule."""

    def __init__(self, params: Mapping[str, GradSlot], lr: float = DEFAULT_LR,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 state: AdamState | None = None):
        if not lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {(beta1, beta2)}")
        self.params = dict(params)
        if state is None:
            state = AdamState.zeros_like(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        elif set(state.m) != set(self.params):
            raise ConfigError("optimizer state does not match the parameter set")
        self.state = state

    def zero_grad(self) -> None:
        for s in self.params.values():
            s.zero_grad()

    def step(self) -> None:
        st = self.state
        for name, slot in self.params.items():
            if not np.all(np.isfinite(slot.grad)):
                raise NonFiniteError(f"non-finite gradient in parameter block '{name}'")
        st.t += 1
        c1 = 1.0 - st.beta1 ** st.t
        c2 = 1.0 - st.beta2 ** st.t
        for name, slot in self.params.items():
            g = slot.grad
            m, v = st.m[name], st.v[name]
            dt = m.dtype.type
            m *= dt(st.beta1)
            m += dt(1.0 - st.beta1) * g
            v *= dt(st.beta2)
            v += dt(1.0 - st.beta2) * g * g
            m_hat = m / dt(c1)
            v_hat = v / dt(c2)
            slot.value -= dt(st.lr) * m_hat / (np.sqrt(v_hat) + dt(st.eps))
