"""Plain RMSprop (no momentum, not centered)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .backbone import Parameter


def rmsprop_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: Sequence[np.ndarray],
    lr: float,
    decay: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """In-place update: ``s = decay*s + (1-decay)*g^2``; ``p -= lr*g/(sqrt(s)+eps)``."""
    if not len(params) == len(grads) == len(state):
        raise ValueError("params, grads and state must have equal length")
    for p, g, s in zip(params, grads, state):
        if not p.shape == g.shape == s.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {s.shape}")
        s *= decay
        s += (1.0 - decay) * g * g
        p -= lr * g / (np.sqrt(s) + eps)


class RMSprop:
    def __init__(self, params: Sequence[Parameter], lr: float = 5e-4, decay: float = 0.99, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.state = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        rmsprop_step(
            [p.data for p in self.params], [p.grad for p in self.params], self.state,
            self.lr, self.decay, self.eps,
        )
