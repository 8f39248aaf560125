"""Prototype-based backdoor-adjusted classification head and the joint loss.

Label prototypes are running means of pre-fusion [CLS] states. They enter the
loss graph as constants, so no gradient ever reaches them. The intervention
projects the concatenated prototypes, joins the result with the topic-fused
[CLS] state and maps that to one logit. The prediction averages
``sigmoid(logit)`` over labels with the uniform prior ``1/|Y|``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .nn import F, Linear, Param, Tensor


class PrototypeError(RuntimeError):
    pass


class Prototypes:
    def __init__(self, label_set: Sequence[int], d_model: int, momentum: float = 0.9, dtype=np.float64):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.label_set = tuple(label_set)
        self.momentum = momentum
        self.values = np.zeros((len(self.label_set), d_model), dtype=dtype)
        self.counts_seen = np.zeros(len(self.label_set), dtype=np.int64)
        self.initialized = np.zeros(len(self.label_set), dtype=bool)

    def __getitem__(self, label: int) -> np.ndarray:
        return self.values[self.label_set.index(label)]

    @property
    def ready(self) -> bool:
        return bool(self.initialized.all())

    def copy(self) -> Prototypes:
        out = Prototypes(self.label_set, self.values.shape[1], self.momentum, self.values.dtype)
        out.values[:] = self.values
        out.counts_seen[:] = self.counts_seen
        out.initialized[:] = self.initialized
        return out


def update_prototypes(batch_h_cls, labels, protos: Prototypes) -> None:
    """EMA update with each present label's batch mean; the first update copies the mean."""
    h = np.asarray(batch_h_cls.data if isinstance(batch_h_cls, Tensor) else batch_h_cls)
    labels = np.asarray(labels)
    for j, l in enumerate(protos.label_set):
        sel = labels == l
        n = int(sel.sum())
        if n == 0:
            continue
        m = h[sel].mean(axis=0)
        if protos.initialized[j]:
            protos.values[j] = protos.momentum * protos.values[j] + (1.0 - protos.momentum) * m
        else:
            protos.values[j] = m
            protos.initialized[j] = True
        protos.counts_seen[j] += n
    unknown = set(np.unique(labels).tolist()) - set(protos.label_set)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} are not in the prototype label set")


class HeadParams:
    """``proto_proj``: |Y|*d -> d, ``out_proj``: 2d -> n_out (1 for the binary head)."""

    def __init__(self, n_labels: int, d_model: int, rng=None, dtype=np.float64, n_out: int = 1):
        rng = np.random.default_rng(0) if rng is None else rng
        self.proto_proj = Linear("head.proto", n_labels * d_model, d_model, rng, dtype)
        self.out_proj = Linear("head.out", 2 * d_model, n_out, rng, dtype)

    def params(self) -> list[Param]:
        return [*self.proto_proj.params(), *self.out_proj.params()]


class PlainHead:
    """Direct ``d -> n_out`` logit; used when the intervention is ablated."""

    def __init__(self, d_model: int, rng=None, dtype=np.float64, n_out: int = 1):
        rng = np.random.default_rng(0) if rng is None else rng
        self.out_proj = Linear("head.plain", d_model, n_out, rng, dtype)

    def params(self) -> list[Param]:
        return self.out_proj.params()

    def __call__(self, h_topic_cls) -> Tensor:
        out = self.out_proj(h_topic_cls)
        return F.reshape(out, out.shape[:-1]) if out.shape[-1] == 1 else out


def intervene(h_topic_cls, protos: Prototypes, head: HeadParams) -> Tensor:
    """Logit(s) from the fused [CLS] state and the projected prototypes (fixed label order)."""
    if not protos.ready:
        missing = [l for l, ok in zip(protos.label_set, protos.initialized) if not ok]
        raise PrototypeError(f"prototypes for labels {missing} are uninitialized; run a warm pass first")
    h = F.as_tensor(h_topic_cls)
    flat = Tensor(protos.values.reshape(1, -1).astype(h.dtype, copy=False))
    label_info = head.proto_proj(flat)
    if h.ndim == 1:
        joined = F.concat([h, F.reshape(label_info, label_info.shape[1:])], axis=-1)
    else:
        joined = F.concat([h, F.broadcast_to(label_info, (h.shape[0], label_info.shape[1]))], axis=-1)
    out = head.out_proj(joined)
    return F.reshape(out, out.shape[:-1]) if out.shape[-1] == 1 else out


def _exact_mean(stack: np.ndarray) -> np.ndarray:
    # two-pass corrected mean: exact whenever all entries along axis 0 are equal
    m = stack.sum(axis=0) / stack.shape[0]
    return m + (stack - m).sum(axis=0) / stack.shape[0]


def predict(h_prime, n_labels: int = 2) -> np.ndarray:
    """Backdoor-adjusted probability ``(1/|Y|) * sum_l sigmoid(h')``.

    The summand does not depend on ``l``, so this equals ``sigmoid(h')``; the
    average is kept in its literal form and computed with a corrected mean so
    the identity holds bit for bit.
    """
    p = expit(np.asarray(h_prime.data if isinstance(h_prime, Tensor) else h_prime, dtype=float))
    stack = np.broadcast_to(p, (n_labels, *p.shape))
    return _exact_mean(stack)


def cfd_loss(logits, y) -> Tensor:
    """Mean binary cross-entropy evaluated from logits."""
    return F.mean(F.bce_with_logits(logits, y))


def multiclass_loss(logits, y_index) -> Tensor:
    logits = F.as_tensor(logits)
    idx = np.asarray(y_index, dtype=np.int64)
    picked = F.getitem(F.log_softmax(logits, axis=-1), (np.arange(len(idx)), idx))
    return -F.mean(picked)


@dataclass(frozen=True)
class LossWeights:
    lambda_ntm: float = 0.5

    def __post_init__(self):
        if self.lambda_ntm < 0:
            raise ValueError("lambda_ntm must be non-negative")


def total_loss(cfd, ntm, w: LossWeights = LossWeights()):
    if w.lambda_ntm == 0.0 or ntm is None:
        return cfd
    return F.add(cfd, F.mul(ntm, w.lambda_ntm))
