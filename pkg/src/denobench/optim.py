"""Adam with bias correction, operating on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamState", "init_adam", "adam_step"]


@dataclass
class AdamState:
    """First/second moment buffers keyed like the parameter dict, plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p.data) for name, p in params.items()},
        v={name: np.zeros_like(p.data) for name, p in params.items()},
        t=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One update: p -= lr * m_hat / (sqrt(v_hat) + eps), updating moments in place.

    Every parameter must carry a grad buffer (zero counts as a valid
    gradient and leaves the parameter unchanged at t=1).
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
