"""Adaptive-moment gradient descent."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import NumericError
from .tensor import DTensor


class Adam:
    """Bias-corrected first/second moment updates.

    Moments are keyed by the identity of each parameter tensor, whose
    `data` array is replaced (not mutated) on every step.
    """

    def __init__(self, params: Iterable[DTensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        bad = [p.name or "?" for p in self.params if p.grad is not None and not np.all(np.isfinite(p.grad))]
        if bad:
            raise NumericError(f"non-finite gradient at step {self.step_count + 1} in: {', '.join(bad)}")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            if p.grad is None:
                continue
            m, v = self.m[id(p)], self.v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
