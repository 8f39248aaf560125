"""Full topic-aware intervention network and its training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ntm as ntm_mod
from .config import RunConfig
from .corpus import Document, LabeledDataset, Vocab, bow_matrix, STOPWORDS
from .encoder import EncoderConfig, TextEncoder, TopicFusion
from .head import (
    HeadParams,
    LossWeights,
    PlainHead,
    Prototypes,
    cfd_loss,
    intervene,
    multiclass_loss,
    predict,
    total_loss,
    update_prototypes,
)
from .metrics import summarize
from .nn import AdamState, F, Param, Tensor, adam_step, no_grad, set_debug, zero_grad
from .nn import checkpoint


@dataclass
class Batch:
    ids: list[str]
    bows: np.ndarray
    seqs: list[list[int]]
    y: np.ndarray
    labels: np.ndarray


def make_batch(docs: Sequence[Document], vocab: Vocab, label_set: Sequence[int], stopwords=None, dtype=np.float64) -> Batch:
    index = {l: i for i, l in enumerate(label_set)}
    labels = np.array([d.label for d in docs], dtype=np.int64)
    return Batch(
        ids=[d.id for d in docs],
        bows=bow_matrix(docs, vocab, stopwords, dtype),
        seqs=[vocab.encode_ids(d.tokens) for d in docs],
        y=np.array([index[l] for l in labels], dtype=np.int64),
        labels=labels,
    )


@dataclass
class Forward:
    logits: Tensor
    h_cls: Tensor
    h_topic_cls: Tensor
    topic: ntm_mod.TopicState | None
    truncated: np.ndarray


class CausalTopicNet:
    """Topic model + encoder + fusion + (intervention or plain) head."""

    def __init__(self, cfg: RunConfig, vocab_size: int, label_set: Sequence[int] = (0, 1)):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.label_set = tuple(label_set)
        if len(self.label_set) < 2:
            raise ValueError("need at least two labels")
        dtype = np.dtype(cfg.dtype)
        self.dtype = dtype
        rng = np.random.default_rng([cfg.seed, 0])
        n_out = 1 if len(self.label_set) == 2 else len(self.label_set)
        self.ntm = None if cfg.no_ntm else ntm_mod.NtmParams(vocab_size, cfg.n_topics, cfg.ntm_hidden, rng, dtype)
        self.encoder = TextEncoder(
            EncoderConfig(vocab_size + 2, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.max_len, cfg.d_ff, cfg.ln_eps),
            rng,
            dtype,
        )
        self.fusion = None if cfg.no_ntm else TopicFusion(cfg.d_model, cfg.n_topics, rng, dtype)
        if cfg.no_debias_cfd:
            self.head: HeadParams | PlainHead = PlainHead(cfg.d_model, rng, dtype, n_out)
        else:
            self.head = HeadParams(len(self.label_set), cfg.d_model, rng, dtype, n_out)
        self.protos = Prototypes(self.label_set, cfg.d_model, cfg.momentum, dtype)
        self.schedule = ntm_mod.GammaSchedule(cfg.warmup_steps, cfg.gamma_target)
        self.weights = LossWeights(0.0 if cfg.no_ntm else cfg.lambda_ntm)

    @property
    def binary(self) -> bool:
        return len(self.label_set) == 2

    def params(self) -> list[Param]:
        out: list[Param] = []
        if self.ntm is not None:
            out += self.ntm.params()
        out += self.encoder.params()
        if self.fusion is not None:
            out += self.fusion.params()
        out += self.head.params()
        return out

    def forward(self, batch: Batch, eps: np.ndarray | None, update_protos: bool = False) -> Forward:
        """``eps=None`` uses the posterior mean (deterministic inference)."""
        topic = None
        if self.ntm is not None:
            if eps is None:
                mu, log_sigma = ntm_mod.encode(self.ntm, batch.bows)
                topic = ntm_mod.TopicState(mu, log_sigma, mu, ntm_mod.topic_repr(mu), np.zeros(mu.shape))
            else:
                topic = ntm_mod.forward(self.ntm, batch.bows, eps)
        hs = self.encoder.encode_sequence(batch.seqs)
        h_cls = hs.h_cls
        if update_protos:
            update_prototypes(h_cls.data, batch.labels, self.protos)
        if self.fusion is not None:
            h_topic = self.fusion(hs.h[:, :1, :], topic.theta)[:, 0, :]
        else:
            h_topic = h_cls
        if isinstance(self.head, PlainHead):
            logits = self.head(h_topic)
        else:
            logits = intervene(h_topic, self.protos, self.head)
        return Forward(logits, h_cls, h_topic, topic, hs.truncated)

    def losses(self, batch: Batch, fwd: Forward, gamma: float):
        if self.binary:
            l_cfd = cfd_loss(fwd.logits, batch.y)
        else:
            l_cfd = multiclass_loss(fwd.logits, batch.y)
        l_ntm = None
        if self.ntm is not None:
            l_ntm = ntm_mod.ntm_loss(self.ntm, batch.bows, fwd.topic, gamma, self.cfg.eps_cos, self.cfg.decoder_relu)
        total = total_loss(l_cfd, None if l_ntm is None else l_ntm.total, self.weights)
        return total, l_cfd, l_ntm

    def predict_proba(self, batch: Batch) -> np.ndarray:
        """Positive-class probability (binary) or class probabilities (multi-class)."""
        with no_grad():
            logits = self.forward(batch, None).logits.data
        if self.binary:
            return predict(logits, len(self.label_set))
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def theta(self, bows: np.ndarray) -> np.ndarray:
        if self.ntm is None:
            raise RuntimeError("model was built with no_ntm; it has no topic model")
        return ntm_mod.infer_theta(self.ntm, bows)


@dataclass
class EpochStats:
    epoch: int
    l_cfd: float
    l_ntm: float
    gamma: float
    val: dict[str, float] = field(default_factory=dict)
    step_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def csv_row(self) -> str:
        v = self.val
        vals = [self.epoch, self.l_cfd, self.l_ntm, self.gamma,
                v.get("acc", float("nan")), v.get("mcc", float("nan")), v.get("f1", float("nan"))]
        return ",".join(repr(float(x)) if not isinstance(x, int) else str(x) for x in vals)


EPOCH_CSV_HEADER = "epoch,L_cfd,L_ntm,gamma,val_acc,val_mcc,val_f1"


class Trainer:
    """Owns the optimizer state and the optimizer-step clock that drives gamma."""

    def __init__(self, model: CausalTopicNet, vocab: Vocab):
        self.model = model
        self.vocab = vocab
        cfg = model.cfg
        self.adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        self.epoch = 0
        self.stopwords = STOPWORDS if cfg.stopwords else None

    @property
    def step(self) -> int:
        return self.adam.t

    def batches(self, ds: LabeledDataset, order: np.ndarray | None = None):
        docs = ds.documents
        order = np.arange(len(docs)) if order is None else order
        bs = self.model.cfg.batch_size
        for start in range(0, len(order), bs):
            sel = [docs[i] for i in order[start:start + bs]]
            yield make_batch(sel, self.vocab, self.model.label_set, self.stopwords, self.model.dtype)

    def warm_pass(self, ds: LabeledDataset) -> float:
        """One epoch of forwards filling the prototypes; no optimizer steps, gamma held at 0."""
        if len(ds) == 0:
            raise ValueError("cannot warm-pass an empty dataset")
        m = self.model
        losses = []
        with no_grad():
            for batch in self.batches(ds):
                hs = m.encoder.encode_sequence(batch.seqs)
                update_prototypes(hs.h_cls.data, batch.labels, m.protos)
                if m.ntm is not None:
                    st = ntm_mod.forward(m.ntm, batch.bows, np.zeros((len(batch.ids), m.cfg.n_topics)))
                    losses.append(ntm_mod.ntm_loss(m.ntm, batch.bows, st, m.schedule(-1), m.cfg.eps_cos,
                                                   m.cfg.decoder_relu).total.item())
        return float(np.mean(losses)) if losses else 0.0

    def train_step(self, batch: Batch, eps: np.ndarray | None) -> tuple[float, float, float, float]:
        m = self.model
        gamma = m.schedule(self.step)
        if m.cfg.lr_warmup:
            self.adam.lr = m.cfg.lr * min(1.0, (self.step + 1) / m.cfg.lr_warmup)
        params = m.params()
        zero_grad(params)
        fwd = m.forward(batch, eps, update_protos=True)
        total, l_cfd, l_ntm = m.losses(batch, fwd, gamma)
        total.backward()
        adam_step(params, self.adam)
        return total.item(), l_cfd.item(), (l_ntm.total.item() if l_ntm is not None else 0.0), gamma

    def train_epoch(
        self,
        ds: LabeledDataset,
        val: LabeledDataset | None = None,
        max_steps: int | None = None,
        on_step: Callable[[int, float], None] | None = None,
    ) -> EpochStats:
        if len(ds) == 0:
            raise ValueError("cannot train on an empty dataset")
        m = self.model
        set_debug(m.cfg.debug)
        if not m.protos.ready and not m.cfg.no_debias_cfd:
            self.warm_pass(ds)
        t0 = time.perf_counter()
        seed = m.cfg.seed
        order = np.random.default_rng([seed, 1, self.epoch]).permutation(len(ds))
        noise = np.random.default_rng([seed, 2, self.epoch])
        totals, cfds, ntms = [], [], []
        gamma = m.schedule(self.step)
        for batch in self.batches(ds, order):
            if max_steps is not None and len(totals) >= max_steps:
                break
            eps = noise.standard_normal((len(batch.ids), m.cfg.n_topics)).astype(m.dtype) if m.ntm else None
            tot, c, n, gamma = self.train_step(batch, eps)
            totals.append(tot)
            cfds.append(c)
            ntms.append(n)
            if on_step is not None:
                on_step(self.step, tot)
        stats = EpochStats(self.epoch + 1, float(np.mean(cfds)), float(np.mean(ntms)), gamma,
                           step_losses=totals, seconds=time.perf_counter() - t0)
        if val is not None and len(val):
            stats.val = self.evaluate(val)
        self.epoch += 1
        return stats

    def predict_proba(self, ds: LabeledDataset) -> np.ndarray:
        out = [self.model.predict_proba(b) for b in self.batches(ds)]
        return np.concatenate(out) if out else np.zeros(0)

    def evaluate(self, ds: LabeledDataset) -> dict[str, float]:
        if len(ds) == 0:
            raise ValueError("cannot evaluate on an empty dataset")
        probs = self.predict_proba(ds)
        if not self.model.binary:
            pred = np.asarray(self.model.label_set)[probs.argmax(axis=1)]
            return {"acc": float(np.mean(pred == ds.labels))}
        y = np.array([self.model.label_set.index(l) for l in ds.labels])
        return summarize(probs, y, self.model.cfg.threshold)

    # checkpoints

    def state_dict(self) -> dict[str, np.ndarray]:
        m = self.model
        out: dict[str, np.ndarray] = {p.name: p.data for p in m.params()}
        out["proto.values"] = m.protos.values
        out["proto.counts"] = m.protos.counts_seen.astype(np.float64)
        out["proto.initialized"] = m.protos.initialized.astype(np.float64)
        out["train.step"] = np.array(float(self.adam.t))
        out["train.epoch"] = np.array(float(self.epoch))
        for p in m.params():
            if p.name in self.adam.m:
                out[f"adam.m.{p.name}"] = self.adam.m[p.name]
                out[f"adam.v.{p.name}"] = self.adam.v[p.name]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        m = self.model
        for p in m.params():
            if p.name not in state:
                raise checkpoint.CheckpointError(f"checkpoint lacks parameter {p.name!r}")
            arr = state[p.name]
            if arr.shape != p.shape:
                raise checkpoint.CheckpointError(f"{p.name}: shape {arr.shape} != model {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            if f"adam.m.{p.name}" in state:
                self.adam.m[p.name] = state[f"adam.m.{p.name}"].copy()
                self.adam.v[p.name] = state[f"adam.v.{p.name}"].copy()
        if state["proto.values"].shape != m.protos.values.shape:
            raise checkpoint.CheckpointError("prototype shape mismatch")
        m.protos.values = state["proto.values"].copy()
        m.protos.counts_seen = state["proto.counts"].astype(np.int64)
        m.protos.initialized = state["proto.initialized"].astype(bool)
        self.adam.t = int(state["train.step"])
        self.epoch = int(state["train.epoch"])

    def save(self, path) -> None:
        checkpoint.save(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(checkpoint.load(path))
