"""Bias-corrected Adam."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Var
from .exceptions import NumericError, ShapeError


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Var], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """In-place bias-corrected Adam update; a ``None`` grad counts as zero."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    for p, g in zip(params, grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter of shape {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape}")
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        update = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
        p.value = p.value - update
    return state


class Adam:
    def __init__(self, params: Sequence[Var], lr: float = 2e-4, betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
