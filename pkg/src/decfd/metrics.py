"""Binary classification metrics computed from confusion counts.

The positive class (label 1) is the counterfactual class. Predictions are
positive when ``prob >= threshold``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float = 0.5

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(probs, labels, threshold: float = 0.5) -> Confusion:
    probs = np.asarray(probs, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.size} probabilities vs {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    pred = probs >= threshold
    pos = labels == 1
    return Confusion(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        threshold=threshold,
    )


def accuracy(c: Confusion) -> float:
    if c.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return (c.tp + c.tn) / c.total


def mcc(c: Confusion) -> float:
    """Matthews correlation; 0.0 whenever a marginal is empty."""
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(math.prod(float(f) for f in factors))


def f1(c: Confusion) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def summarize(probs, labels, threshold: float = 0.5) -> dict[str, float]:
    c = confusion(probs, labels, threshold)
    return {"acc": accuracy(c), "mcc": mcc(c), "f1": f1(c)}
