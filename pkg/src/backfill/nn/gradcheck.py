"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import DTensor


def numeric_grad(fn: Callable[[], DTensor], x: DTensor, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return g


def grad_check(fn: Callable[[], DTensor], inputs: Sequence[DTensor], h: float = 1e-5,
               floor: float = 1e-8, rel_floor: float = 1e-6) -> float:
    """Max elementwise relative error between tape and central-difference gradients.

    `fn` closes over `inputs` and must rebuild its graph on every call.
    Relative error is |a - n| / max(|a|, |n|, floor, rel_floor * max|a|), the
    last term keeping near-zero entries of a tensor from being judged on
    finite-difference round-off alone.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    fn().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    worst = 0.0
    for x, a in zip(inputs, analytic):
        n = numeric_grad(fn, x, h)
        scale = max(floor, rel_floor * float(np.max(np.abs(a), initial=0.0)))
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
        worst = max(worst, float(np.max(np.abs(a - n) / denom, initial=0.0)))
    return worst
