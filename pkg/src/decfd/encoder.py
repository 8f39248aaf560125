"""Small from-scratch transformer encoder, topic fusion and [CLS] attention readout.

This encoder stands in for a pretrained language model. Sequences get a
[CLS] id prepended, token and position embeddings, then ``n_layers`` post-norm
blocks of multi-head self-attention and a ReLU feed-forward layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import F, Linear, Param, Tensor

_MASKED = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    d_ff: int = 128
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must leave room for [CLS] and one token")


@dataclass
class HiddenSeq:
    """Batched encoder output. Position 0 of every row is [CLS]."""

    h: Tensor
    lengths: np.ndarray
    attn: list[np.ndarray]
    truncated: np.ndarray
    full_attn: list[np.ndarray] = field(default_factory=list)

    @property
    def h_cls(self) -> Tensor:
        return self.h[:, 0, :]

    def h_tokens(self, b: int) -> np.ndarray:
        return self.h.data[b, 1:1 + self.lengths[b]]


class _Block:
    def __init__(self, name: str, cfg: EncoderConfig, rng, dtype):
        d = cfg.d_model
        self.q = Linear(f"{name}.q", d, d, rng, dtype)
        self.k = Linear(f"{name}.k", d, d, rng, dtype)
        self.v = Linear(f"{name}.v", d, d, rng, dtype)
        self.o = Linear(f"{name}.o", d, d, rng, dtype)
        self.ln1_g = Param(np.ones(d, dtype=dtype), f"{name}.ln1.g")
        self.ln1_b = Param(np.zeros(d, dtype=dtype), f"{name}.ln1.b")
        self.ff1 = Linear(f"{name}.ff1", d, cfg.d_ff, rng, dtype)
        self.ff2 = Linear(f"{name}.ff2", cfg.d_ff, d, rng, dtype)
        self.ln2_g = Param(np.ones(d, dtype=dtype), f"{name}.ln2.g")
        self.ln2_b = Param(np.zeros(d, dtype=dtype), f"{name}.ln2.b")

    def params(self) -> list[Param]:
        return [*self.q.params(), *self.k.params(), *self.v.params(), *self.o.params(),
                self.ln1_g, self.ln1_b, *self.ff1.params(), *self.ff2.params(), self.ln2_g, self.ln2_b]

    def __call__(self, x: Tensor, mask: np.ndarray, n_heads: int, eps: float):
        B, T, d = x.shape
        dh = d // n_heads

        def heads(t):
            return F.transpose(F.reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = F.add(F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh)), mask)
        attn = F.softmax(scores, axis=-1)
        ctx = F.reshape(F.transpose(F.matmul(attn, v), (0, 2, 1, 3)), (B, T, d))
        x = F.layer_norm(F.add(x, self.o(ctx)), self.ln1_g, self.ln1_b, eps)
        ff = self.ff2(F.relu(self.ff1(x)))
        x = F.layer_norm(F.add(x, ff), self.ln2_g, self.ln2_b, eps)
        return x, attn.data


class TextEncoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator | None = None, dtype=np.float64):
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        d = cfg.d_model
        a = np.sqrt(3.0 / d)
        self.tok_emb = Param(rng.uniform(-a, a, size=(cfg.vocab_size, d)).astype(dtype), "enc.tok_emb")
        self.pos_emb = Param(rng.uniform(-a, a, size=(cfg.max_len, d)).astype(dtype), "enc.pos_emb")
        self.blocks = [_Block(f"enc.l{i}", cfg, rng, dtype) for i in range(cfg.n_layers)]

    @property
    def cls_id(self) -> int:
        return self.cfg.vocab_size - 1

    @property
    def pad_id(self) -> int:
        return self.cfg.vocab_size - 2

    def params(self) -> list[Param]:
        return [self.tok_emb, self.pos_emb, *(p for b in self.blocks for p in b.params())]

    def encode_sequence(self, batch: Sequence[Sequence[int]], keep_full_attn: bool = False) -> HiddenSeq:
        """Encode a batch of id sequences (without [CLS]; it is prepended here).

        Over-long sequences are cut to ``max_len - 1`` tokens and flagged.
        """
        cap = self.cfg.max_len - 1
        truncated = np.array([len(s) > cap for s in batch], dtype=bool)
        seqs = [list(s[:cap]) for s in batch]
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        B, T = len(seqs), int(lengths.max(initial=0)) + 1
        ids = np.full((B, T), self.pad_id, dtype=np.int64)
        ids[:, 0] = self.cls_id
        for b, s in enumerate(seqs):
            ids[b, 1:1 + len(s)] = s
        valid = np.arange(T)[None, :] <= lengths[:, None]
        mask = np.where(valid, 0.0, _MASKED).astype(self.tok_emb.dtype)[:, None, None, :]

        x = F.add(F.embedding(self.tok_emb, ids), self.pos_emb[:T])
        cls_rows, full = [], []
        for block in self.blocks:
            x, attn = block(x, mask, self.cfg.n_heads, self.cfg.ln_eps)
            cls_rows.append(attn[:, :, 0, :].copy())
            if keep_full_attn:
                full.append(attn)
        return HiddenSeq(x, lengths, cls_rows, truncated, full)


class TopicFusion:
    """``tanh(W [h_i, theta] + b)`` applied at every position."""

    def __init__(self, d_model: int, n_topics: int, rng: np.random.Generator | None = None, dtype=np.float64):
        rng = np.random.default_rng(0) if rng is None else rng
        self.proj = Linear("fuse", d_model + n_topics, d_model, rng, dtype)
        self.n_topics = n_topics

    def params(self) -> list[Param]:
        return self.proj.params()

    def __call__(self, h, theta) -> Tensor:
        h, theta = F.as_tensor(h), F.as_tensor(theta)
        B, T = h.shape[0], h.shape[1]
        th = F.broadcast_to(F.reshape(theta, (B, 1, self.n_topics)), (B, T, self.n_topics))
        return F.tanh(self.proj(F.concat([h, th], axis=-1)))


def fuse_topic(fusion: TopicFusion, hs: HiddenSeq, theta) -> Tensor:
    return fusion(hs.h, theta)


def cls_attention(hs: HiddenSeq, b: int = 0) -> np.ndarray:
    """Mean [CLS] attention over layers and heads for document ``b``.

    The [CLS] self-weight is dropped and the rest renormalized over the real tokens.
    """
    n = int(hs.lengths[b])
    if n == 0:
        return np.zeros(0)
    row = np.mean([a[b] for a in hs.attn], axis=(0, 1))
    w = row[1:1 + n]
    return w / w.sum()
