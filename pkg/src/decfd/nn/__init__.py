"""Minimal differentiable substrate: tape autodiff, Adam, gradient checking, checkpoints."""
from __future__ import annotations

import numpy as np

from . import tensor as F
from .checkpoint import CheckpointError
from .gradcheck import grad_check
from .optim import AdamState, adam_step, zero_grad
from .tensor import Param, Tensor, no_grad, set_debug


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int, dtype=np.float64) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in)).astype(dtype)


class Linear:
    """Affine map holding its own weight (out, in) and bias."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        self.W = Param(glorot(rng, n_out, n_in, dtype), f"{name}.W")
        self.b = Param(np.zeros(n_out, dtype=dtype), f"{name}.b")

    def __call__(self, x) -> Tensor:
        return F.affine(x, self.W, self.b)

    def params(self) -> list[Param]:
        return [self.W, self.b]


__all__ = [
    "AdamState",
    "CheckpointError",
    "F",
    "Linear",
    "Param",
    "Tensor",
    "adam_step",
    "glorot",
    "grad_check",
    "no_grad",
    "set_debug",
    "zero_grad",
]
