"""Variational neural topic model with the deconfounded objective.

All functions are batch-first: bag-of-words input is a dense ``(B, V)``
count matrix and per-document quantities come back with a leading ``B``
axis. The decoder weight ``phi`` has shape ``(V, K)``; row ``i`` embeds word
``i`` over topics and column ``k`` holds topic ``k``'s word weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import F, Linear, Param, Tensor

log = logging.getLogger(__name__)

EPS_COS = 1e-6


@dataclass(frozen=True)
class GammaSchedule:
    """Linear warm-up of the deconfounding weight."""

    warmup_steps: int = 1000
    target: float = 0.25

    def __call__(self, step: int) -> float:
        if step <= 0:
            return 0.0
        if self.warmup_steps <= 0:
            return self.target
        return self.target * min(1.0, step / self.warmup_steps)


class NtmParams:
    def __init__(
        self,
        vocab_size: int,
        n_topics: int = 15,
        hidden: int = 256,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.vocab_size = vocab_size
        self.n_topics = n_topics
        self.hidden = hidden
        self.f0 = Linear("ntm.f0", vocab_size, hidden, rng, dtype)
        self.f_mu = Linear("ntm.mu", hidden, n_topics, rng, dtype)
        self.f_sigma = Linear("ntm.sigma", hidden, n_topics, rng, dtype)
        self.decoder = Linear("ntm.dec", n_topics, vocab_size, rng, dtype)

    @property
    def phi(self) -> Param:
        return self.decoder.W

    def params(self) -> list[Param]:
        return [*self.f0.params(), *self.f_mu.params(), *self.f_sigma.params(), *self.decoder.params()]


@dataclass
class TopicState:
    mu: Tensor
    log_sigma: Tensor
    z: Tensor
    theta: Tensor
    eps: np.ndarray


def encode(p: NtmParams, x) -> tuple[Tensor, Tensor]:
    x = F.as_tensor(x)
    if x.shape[-1] != p.vocab_size:
        raise ValueError(f"bag-of-words width {x.shape[-1]} does not match V={p.vocab_size}")
    pi = F.softplus(p.f0(x))
    return p.f_mu(pi), p.f_sigma(pi)


def reparameterize(mu, log_sigma, eps) -> Tensor:
    return F.add(mu, F.mul(F.exp(log_sigma), np.asarray(eps)))


def topic_repr(z) -> Tensor:
    return F.softmax(z, axis=-1)


def _decoder_logits(p: NtmParams, theta, relu: bool) -> Tensor:
    pre = p.decoder(theta)
    return F.relu(pre) if relu else pre


def decode(p: NtmParams, theta, relu: bool = True) -> Tensor:
    """Word distribution ``softmax(relu(phi @ theta + b))``."""
    return F.softmax(_decoder_logits(p, theta, relu), axis=-1)


def decode_log(p: NtmParams, theta, relu: bool = True) -> Tensor:
    """Log of :func:`decode`, computed stably."""
    return F.log_softmax(_decoder_logits(p, theta, relu), axis=-1)


def forward(p: NtmParams, x, eps) -> TopicState:
    mu, log_sigma = encode(p, x)
    eps = np.asarray(eps, dtype=mu.dtype)
    z = reparameterize(mu, log_sigma, eps)
    return TopicState(mu, log_sigma, z, topic_repr(z), eps)


def kl_term(mu, log_sigma) -> Tensor:
    """Per-document KL(N(mu, sigma^2) || N(0, I))."""
    mu, log_sigma = F.as_tensor(mu), F.as_tensor(log_sigma)
    inner = 1.0 + 2.0 * log_sigma - F.square(mu) - F.exp(2.0 * log_sigma)
    return F.sum_(inner, axis=-1) * -0.5


def recon_term(x, log_word_dist) -> Tensor:
    """Per-document negative log-likelihood ``-sum_v count_v log p_v``."""
    return -F.sum_(F.mul(np.asarray(x), log_word_dist), axis=-1)


def cosine_to_words(theta, phi, eps_cos: float = EPS_COS) -> Tensor:
    """Clamped cosine between each document's theta and every word row of phi, shape (B, V)."""
    theta, phi = F.as_tensor(theta), F.as_tensor(phi)
    dots = F.matmul(theta, F.transpose(phi))
    denom = F.mul(F.l2norm(theta, axis=-1, keepdims=True), F.l2norm(phi, axis=-1))
    zero = denom.data == 0
    if zero.any():
        denom = F.add(denom, zero.astype(denom.dtype))
    return F.clamp(F.div(dots, denom), eps_cos, 1.0)


def deconf_term(x, theta, phi, eps_cos: float = EPS_COS) -> Tensor:
    """Per-document count-weighted sum of log cosines over the words a document contains.

    Always <= 0. Words whose phi row has zero norm contribute ``log eps_cos``.
    """
    x = np.asarray(x)
    phi = F.as_tensor(phi)
    dead = np.linalg.norm(phi.data, axis=-1) == 0
    if dead.any() and (x[..., dead] > 0).any():
        log.warning("%d in-document words have a zero-norm topic embedding", int((x[..., dead] > 0).sum()))
    return F.sum_(F.mul(x, F.log(cosine_to_words(theta, phi, eps_cos))), axis=-1)


@dataclass
class NtmLoss:
    total: Tensor
    kl: float
    recon: float
    deconf: float
    gamma: float


def ntm_loss(
    p: NtmParams,
    x,
    state: TopicState,
    gamma: float,
    eps_cos: float = EPS_COS,
    relu: bool = True,
) -> NtmLoss:
    """Batch mean of ``KL + recon - gamma * deconf`` (single reparameterized sample)."""
    kl = kl_term(state.mu, state.log_sigma)
    rec = recon_term(x, decode_log(p, state.theta, relu))
    per_doc = F.add(kl, rec)
    dec = None
    if gamma != 0.0:
        dec = deconf_term(x, state.theta, p.phi, eps_cos)
        per_doc = F.sub(per_doc, F.mul(dec, gamma))
    total = F.mean(per_doc)
    return NtmLoss(
        total,
        kl=float(kl.data.mean()),
        recon=float(rec.data.mean()),
        deconf=float(dec.data.mean()) if dec is not None else 0.0,
        gamma=gamma,
    )


def infer_theta(p: NtmParams, x) -> np.ndarray:
    """Deterministic topic mixture using the posterior mean (z = mu)."""
    with F.no_grad():
        mu, _ = encode(p, x)
        return topic_repr(mu).data


def top_words(phi, k: int) -> list[list[int]]:
    """For each topic column, the ``k`` highest-weight word ids; ties go to the lower id."""
    phi = np.asarray(phi.data if isinstance(phi, Tensor) else phi)
    V, K = phi.shape
    if not 0 <= k <= V:
        raise ValueError(f"k={k} must lie in [0, V={V}]")
    ids = np.arange(V)
    return [np.lexsort((ids, -phi[:, t]))[:k].tolist() for t in range(K)]
