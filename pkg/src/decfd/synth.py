"""Synthetic biased corpora with planted topics and a spurious clue phrase.

Topic ``k`` owns a disjoint block of the word pool and spreads its mass over
that block with Zipf weights (exponent ``topic_zipf``), in a rank order
shuffled per topic. Each document gets a label ``~ Bernoulli(pos_rate)`` and
a topic mixture
``~ Dirichlet(alpha)`` in which topic 0 (positives) or topic 1 (negatives)
receives an extra pseudo-count. Words are drawn from the mixture. A clue
phrase is inserted with probability ``rho`` into positives and ``1 - rho``
into negatives; ``test_flipped`` re-draws the clue for the ``test_iid``
documents with that pairing inverted, so the two test splits differ only in
where the clues sit.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ConfigError, build
from .corpus import Document, LabeledDataset, balanced_subsample, write_tsv

CLUE_PHRASES = ("if", "i wish", "would have", "should have")
SPLIT_NAMES = ("train", "val", "test_iid", "test_flipped", "test_balanced")
_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SynthConfig:
    n_docs: int = 2000
    n_val: int = 400
    n_test: int = 1000
    vocab_pool: int = 1000
    k_true: int = 15
    doc_len_min: int = 8
    doc_len_max: int = 24
    pos_rate: float = 0.13
    clue_correlation: float = 0.9
    dirichlet_alpha: float = 0.05
    topic_zipf: float = 1.7
    topic_boost: float = 0.5
    balanced_per_class: int = 100
    seed: int = 7

    def __post_init__(self):
        if not 0.0 <= self.clue_correlation <= 1.0:
            raise ConfigError("clue_correlation must lie in [0, 1]")
        if not 0.0 < self.pos_rate < 1.0:
            raise ConfigError("pos_rate must lie in (0, 1)")
        if self.k_true < 2:
            raise ConfigError("k_true must be >= 2")
        if self.n_docs < 1 or self.n_val < 0 or self.n_test < 0:
            raise ConfigError("split sizes must be non-negative (train >= 1)")
        if not 1 <= self.doc_len_min <= self.doc_len_max:
            raise ConfigError("need 1 <= doc_len_min <= doc_len_max")
        if self.vocab_pool < self.k_true:
            raise ConfigError("vocab_pool must hold at least one word per topic")
        if self.dirichlet_alpha <= 0 or self.topic_zipf < 0 or self.topic_boost < 0:
            raise ConfigError("Dirichlet parameters must be positive")
        if self.balanced_per_class < 0:
            raise ConfigError("balanced_per_class must be >= 0")

    @classmethod
    def from_mapping(cls, values) -> SynthConfig:
        return build(cls, values)


@dataclass
class TopicGroundTruth:
    topic_word: np.ndarray
    mixtures: dict[str, np.ndarray] = field(default_factory=dict)
    clue_flags: dict[str, np.ndarray] = field(default_factory=dict)
    doc_ids: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class SynthCorpus:
    splits: dict[str, LabeledDataset]
    truth: TopicGroundTruth
    config: SynthConfig

    def __getitem__(self, name: str) -> LabeledDataset:
        return self.splits[name]


def pool_tokens(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"w{i:0{width}d}" for i in range(n)]


def topic_word_matrix(cfg: SynthConfig) -> np.ndarray:
    """(k_true, vocab_pool) rows: Zipf mass over each topic's own block of words."""
    rng = np.random.default_rng([cfg.seed, 99])
    out = np.zeros((cfg.k_true, cfg.vocab_pool))
    blocks = np.array_split(np.arange(cfg.vocab_pool), cfg.k_true)
    for k, block in enumerate(blocks):
        w = 1.0 / np.arange(1, len(block) + 1) ** cfg.topic_zipf
        out[k, rng.permutation(block)] = w / w.sum()
    return out


def _insert_clue(words: list[str], rng: np.random.Generator) -> list[str]:
    clue = CLUE_PHRASES[int(rng.integers(len(CLUE_PHRASES)))].split()
    pos = int(rng.integers(len(words) + 1))
    return words[:pos] + clue + words[pos:]


def _base_doc(cfg: SynthConfig, cdf: np.ndarray, vocab: Sequence[str], split: str, idx: int):
    rng = np.random.default_rng([cfg.seed, _SPLIT_CODES[split], idx])
    label = int(rng.random() < cfg.pos_rate)
    alpha = np.full(cfg.k_true, cfg.dirichlet_alpha)
    alpha[0 if label else 1] += cfg.topic_boost
    mix = rng.dirichlet(alpha)
    n = int(rng.integers(cfg.doc_len_min, cfg.doc_len_max + 1))
    topics = rng.choice(cfg.k_true, size=n, p=mix)
    u = rng.random(n)
    word_ids = [min(int(np.searchsorted(cdf[t], ui, side="right")), len(vocab) - 1) for t, ui in zip(topics, u)]
    return label, mix, [vocab[i] for i in word_ids]


def _with_clue(cfg: SynthConfig, words, label: int, split: str, idx: int, flipped: bool):
    rng = np.random.default_rng([cfg.seed, _SPLIT_CODES[split], idx, 2 if flipped else 1])
    rho = cfg.clue_correlation
    p = (1.0 - rho if label else rho) if flipped else (rho if label else 1.0 - rho)
    flag = bool(rng.random() < p)
    return (_insert_clue(list(words), rng) if flag else list(words)), flag


def gen_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Generate all five splits; fully determined by ``cfg`` (including its seed)."""
    topic_word = topic_word_matrix(cfg)
    cdf = np.cumsum(topic_word, axis=1)
    vocab = pool_tokens(cfg.vocab_pool)
    truth = TopicGroundTruth(topic_word)
    splits: dict[str, LabeledDataset] = {}

    def emit(name: str, split: str, n: int, flipped: bool = False, id_prefix: str | None = None):
        docs, mixes, flags, ids = [], [], [], []
        for i in range(n):
            label, mix, words = _base_doc(cfg, cdf, vocab, split, i)
            words, flag = _with_clue(cfg, words, label, split, i, flipped)
            doc_id = f"{id_prefix or name}-{i:05d}"
            text = " ".join(words)
            docs.append(Document.from_text(doc_id, text, label))
            mixes.append(mix)
            flags.append(flag)
            ids.append(doc_id)
        splits[name] = LabeledDataset(tuple(docs), (0, 1), "test" if split == "test" else split)
        truth.mixtures[name] = np.array(mixes).reshape(n, cfg.k_true)
        truth.clue_flags[name] = np.array(flags, dtype=bool)
        truth.doc_ids[name] = ids

    emit("train", "train", cfg.n_docs)
    emit("val", "val", cfg.n_val)
    emit("test_iid", "test", cfg.n_test)
    emit("test_flipped", "test", cfg.n_test, flipped=True)

    bal = balanced_subsample(splits["test_iid"], cfg.balanced_per_class, cfg.seed)
    splits["test_balanced"] = bal
    pos = {d: i for i, d in enumerate(truth.doc_ids["test_iid"])}
    rows = [pos[d.id] for d in bal.documents]
    truth.mixtures["test_balanced"] = truth.mixtures["test_iid"][rows]
    truth.clue_flags["test_balanced"] = truth.clue_flags["test_iid"][rows]
    truth.doc_ids["test_balanced"] = [d.id for d in bal.documents]
    return SynthCorpus(splits, truth, cfg)


def write_corpus(corpus: SynthCorpus, out_dir: str | os.PathLike) -> list[str]:
    """Write ``<split>.tsv`` and ``truth_<split>.csv`` for every split; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    k = corpus.config.k_true
    for name in SPLIT_NAMES:
        path = os.path.join(out_dir, f"{name}.tsv")
        write_tsv(path, corpus.splits[name])
        written.append(path)
        tpath = os.path.join(out_dir, f"truth_{name}.csv")
        with open(tpath, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(["doc_id", "clue_flag", *(f"mix_{j + 1}" for j in range(k))]) + "\n")
            for doc_id, flag, mix in zip(corpus.truth.doc_ids[name], corpus.truth.clue_flags[name],
                                         corpus.truth.mixtures[name]):
                fh.write(",".join([doc_id, str(int(flag)), *(repr(float(m)) for m in mix)]) + "\n")
        written.append(tpath)
    return written


def has_clue(doc: Document) -> bool:
    toks = doc.tokens
    for phrase in CLUE_PHRASES:
        p = phrase.split()
        for i in range(len(toks) - len(p) + 1):
            if list(toks[i:i + len(p)]) == p:
                return True
    return False


# diagnostics

def topic_concentration(theta_fn: Callable[[Sequence[Document]], np.ndarray], corpus: Sequence[Document]) -> np.ndarray:
    """Share of documents whose most probable topic is k (ties resolve to the lowest index)."""
    docs = list(corpus)
    theta = np.asarray(theta_fn(docs))
    if len(docs) == 0:
        return np.zeros(theta.shape[-1] if theta.ndim == 2 else 0)
    top = np.argmax(theta, axis=1)
    return np.bincount(top, minlength=theta.shape[1]) / len(docs)


def concentration_entropy(shares) -> float:
    """Shannon entropy (nats) of the top-topic shares."""
    s = np.asarray(shares, dtype=float)
    if abs(s.sum() - 1.0) > 1e-9 or (s < 0).any():
        raise ValueError("shares must be non-negative and sum to 1")
    nz = s[s > 0]
    return float(-(nz * np.log(nz)).sum())


def clue_gap(
    prob_fn: Callable[[LabeledDataset], np.ndarray],
    test_iid: LabeledDataset,
    test_flipped: LabeledDataset,
    threshold: float = 0.5,
) -> dict[str, float]:
    """Accuracy drop when clue phrases move to the other class."""
    def acc(ds):
        pred = (np.asarray(prob_fn(ds)) >= threshold).astype(int)
        return float(np.mean(pred == ds.labels))

    a_iid, a_flip = acc(test_iid), acc(test_flipped)
    return {"acc_iid": a_iid, "acc_flipped": a_flip, "gap": a_iid - a_flip}
