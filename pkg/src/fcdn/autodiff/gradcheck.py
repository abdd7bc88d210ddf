"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def grad_check(loss_fn, params, eps=1e-3, n_samples=16, seed=0, floor=1e-6):
    """Largest relative error between analytic and central-difference
    gradients over a random subset of entries of each parameter.

    ``loss_fn()`` must rebuild the graph and return a scalar tensor; run it
    in 64-bit precision with dropout disabled or its masks frozen.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if isinstance(params, dict):
        pass
    elif isinstance(params, (list, tuple)) and all(isinstance(p, Tensor) for p in params):
        params = {str(i): p for i, p in enumerate(params)}
    else:
        params = dict(params)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = float(analytic[name].reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
