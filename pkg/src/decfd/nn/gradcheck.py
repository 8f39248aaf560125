from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Param, Tensor


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Param],
    h: float = 1e-5,
    n_coords: int = 64,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between backprop gradients and central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values and be
    deterministic (freeze any noise it draws). Up to ``n_coords`` coordinates
    per parameter are probed; smaller params are probed exhaustively. The
    relative error is ``|a - n| / max(|a|, |n|, floor)``, so gradients smaller
    than ``floor`` are compared in absolute terms.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        if flat.size <= n_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        a_flat = analytic[id(p)].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().data)
            flat[i] = orig - h
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
