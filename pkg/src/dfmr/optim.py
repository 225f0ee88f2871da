"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/inf during optimisation."""


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    k: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros_like(param.data), np.zeros_like(param.data),
                   0, lr, beta1, beta2, eps)


def adam_step(param, state):
    """Apply one Adam update to ``param`` in place using ``param.grad``."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        bad = int(np.count_nonzero(~np.isfinite(g)))
        raise NonFiniteError(
            f"non-finite gradient in {param!r}: {bad} entries at step {state.k + 1}")
    state.k += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1 ** state.k)
    vhat = state.v / (1.0 - state.beta2 ** state.k)
    param.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class Adam:
    """Adam over a list of parameters, with optional per-parameter rates.

    ``lrs`` maps a parameter index to a learning rate overriding ``lr``.
    """

    params: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lrs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = [
            AdamState.for_param(p, self.lrs.get(i, self.lr), self.beta1, self.beta2, self.eps)
            for i, p in enumerate(self.params)
        ]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def scale_lr(self, factor):
        """Set every rate to ``factor`` times its initial value."""
        base = [self.lrs.get(i, self.lr) for i in range(len(self.params))]
        for s, lr in zip(self.states, base):
            s.lr = lr * factor

    def step(self):
        for p, s in zip(self.params, self.states):
            if p.requires_grad:
                adam_step(p, s)
