"""Adam optimiser."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> bool:
    """One bias-corrected Adam update, in place on ``params[name].data``.

    Parameters without a gradient are left alone. If any gradient is
    non-finite the whole step is skipped and ``False`` returned.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            log.warning("non-finite gradient for %s; skipping Adam step %d", name, state.step + 1)
            return False
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return True


class Adam:
    """Convenience wrapper binding :func:`adam_step` to a parameter dict."""

    def __init__(self, named_params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> bool:
        grads = {k: p.grad for k, p in self.params.items()}
        return adam_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
