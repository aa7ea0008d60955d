"""Adam with a multiplicative learning-rate decay on loss plateaus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError


@dataclass
class OptimizerState:
    lr: float = 1.6e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.5
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: OptimizerState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One Adam update, in place; parameters without a gradient are left alone."""
    for name, g in grads.items():
        if name not in params:
            raise InvalidInputError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise InvalidInputError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        g = g.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params


class PlateauDecay:
    """Multiply the learning rate by ``state.decay`` when the epoch loss has
    failed to improve on the best so far by at least ``min_rel`` (relative) for
    ``patience`` consecutive epochs."""

    def __init__(self, state: OptimizerState, min_rel: float = 1e-3, patience: int = 1):
        if patience < 1:
            raise InvalidInputError(f"patience must be >= 1, got {patience}")
        self.state = state
        self.min_rel = min_rel
        self.patience = patience
        self.best: float | None = None
        self.stale = 0

    def observe(self, epoch_loss: float) -> bool:
        if self.best is None or epoch_loss < self.best * (1.0 - self.min_rel):
            self.best = epoch_loss
            self.stale = 0
            return False
        self.stale += 1
        if self.stale < self.patience:
            return False
        self.stale = 0
        self.state.lr *= self.state.decay
        return True
