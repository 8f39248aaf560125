"""Tokenization, vocabularies, bag-of-words vectors and TSV datasets."""
from __future__ import annotations

import hashlib
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

SPLITS = ("train", "val", "test")

DEFAULT_LABEL_MAP = {
    "0": 0,
    "1": 1,
    "non-counterfactual": 0,
    "counterfactual": 1,
}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and punctuation runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    tokens: tuple[str, ...]
    label: int
    raw_text: str = ""

    @classmethod
    def from_text(cls, doc_id: str, text: str, label: int) -> Document:
        return cls(doc_id, tuple(tokenize(text)), int(label), text)


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    counts: tuple[int, ...]
    min_count: int = 1
    max_size: int | None = None
    token_to_id: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping = {t: i for i, t in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise DataError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def unk_id(self) -> int:
        return self.size

    @property
    def cls_id(self) -> int:
        return self.size + 1

    def encode_ids(self, tokens: Iterable[str]) -> list[int]:
        """Sequence ids for the text encoder; OOV tokens map to the shared UNK id."""
        unk = self.unk_id
        return [self.token_to_id.get(t, unk) for t in tokens]

    def dumps(self) -> str:
        return "".join(f"{t}\t{c}\n" for t, c in zip(self.id_to_token, self.counts))

    def sha256(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> Vocab:
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected token<TAB>count")
                try:
                    counts.append(int(parts[1]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: count is not an integer") from None
                tokens.append(parts[0])
        return cls(tuple(tokens), tuple(counts))


def build_vocab(
    docs: Sequence[Document] | Iterable[Sequence[str]],
    min_count: int = 1,
    max_size: int | None = None,
) -> Vocab:
    """Keep tokens seen at least ``min_count`` times, most frequent first.

    Ties in frequency are broken lexicographically so the result does not
    depend on document order.
    """
    counter: Counter[str] = Counter()
    n_docs = 0
    for doc in docs:
        n_docs += 1
        counter.update(doc.tokens if isinstance(doc, Document) else doc)
    if n_docs == 0:
        raise DataError("cannot build a vocabulary from zero documents")
    kept = sorted(((t, c) for t, c in counter.items() if c >= min_count), key=lambda tc: (-tc[1], tc[0]))
    if max_size is not None:
        kept = kept[:max_size]
    if not kept:
        raise DataError(f"no token occurs at least min_count={min_count} times")
    return Vocab(tuple(t for t, _ in kept), tuple(c for _, c in kept), min_count, max_size)


@dataclass(frozen=True)
class BowVector:
    counts: Mapping[int, int]
    vocab_size: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.vocab_size, dtype=dtype)
        for i, c in self.counts.items():
            out[i] = c
        return out


def to_bow(doc: Document | Sequence[str], vocab: Vocab, stopwords: Iterable[str] | None = None) -> BowVector:
    tokens = doc.tokens if isinstance(doc, Document) else doc
    stop = frozenset(stopwords) if stopwords is not None else frozenset()
    counts: Counter[int] = Counter()
    for t in tokens:
        i = vocab.token_to_id.get(t)
        if i is not None and t not in stop:
            counts[i] += 1
    return BowVector(dict(sorted(counts.items())), vocab.size)


def bow_matrix(docs: Sequence[Document], vocab: Vocab, stopwords=None, dtype=np.float64) -> np.ndarray:
    """Dense (n_docs, V) count matrix."""
    out = np.zeros((len(docs), vocab.size), dtype=dtype)
    for r, d in enumerate(docs):
        for i, c in to_bow(d, vocab, stopwords).counts.items():
            out[r, i] = c
    return out


STOPWORDS = ENGLISH_STOP_WORDS


@dataclass(frozen=True)
class LabeledDataset:
    documents: tuple[Document, ...]
    label_set: tuple[int, ...] = (0, 1)
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {self.split!r}")
        allowed = set(self.label_set)
        for d in self.documents:
            if d.label not in allowed:
                raise DataError(f"document {d.id!r} has label {d.label} outside {self.label_set}")

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.documents], dtype=np.int64)

    def by_id(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.id == doc_id:
                return d
        raise KeyError(doc_id)


def _infer_split(path: str | os.PathLike) -> str:
    stem = os.path.basename(os.fspath(path)).lower()
    for s in SPLITS:
        if stem.startswith(s):
            return s
    return "test"


def load_tsv(
    path: str | os.PathLike,
    label_map: Mapping[str, int] | None = None,
    split: str | None = None,
    label_set: Sequence[int] | None = None,
) -> LabeledDataset:
    """Read ``id<TAB>label<TAB>text`` rows; a first row starting with ``id`` is a header."""
    label_map = DEFAULT_LABEL_MAP if label_map is None else label_map
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[0] == "id":
                continue
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            doc_id, label, text = parts
            if label not in label_map:
                raise DataError(f"{path}:{lineno}: unknown label {label!r}")
            docs.append(Document.from_text(doc_id, text, label_map[label]))
    if label_set is None:
        label_set = sorted(set(label_map.values()))
    return LabeledDataset(tuple(docs), tuple(label_set), split or _infer_split(path))


def write_tsv(path: str | os.PathLike, ds: LabeledDataset, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write("id\tlabel\ttext\n")
        for d in ds.documents:
            text = d.raw_text or " ".join(d.tokens)
            if "\t" in text or "\n" in text:
                raise DataError(f"document {d.id!r} text contains a tab or newline")
            fh.write(f"{d.id}\t{d.label}\t{text}\n")


@dataclass
class DatasetStats:
    label_set: tuple[int, ...]
    by_split: dict[str, dict[int, int]]

    @property
    def split_totals(self) -> dict[str, int]:
        return {s: sum(c.values()) for s, c in self.by_split.items()}

    @property
    def label_totals(self) -> dict[int, int]:
        return {l: sum(c.get(l, 0) for c in self.by_split.values()) for l in self.label_set}

    @property
    def total(self) -> int:
        return sum(self.split_totals.values())

    def format_table(self) -> str:
        cols = ["split", *(f"label_{l}" for l in self.label_set), "total"]
        rows = [[s, *(str(c.get(l, 0)) for l in self.label_set), str(sum(c.values()))]
                for s, c in self.by_split.items()]
        rows.append(["all", *(str(self.label_totals[l]) for l in self.label_set), str(self.total)])
        widths = [max(len(r[i]) for r in [cols, *rows]) for i in range(len(cols))]
        return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in [cols, *rows])


def dataset_stats(datasets: LabeledDataset | Iterable[LabeledDataset]) -> DatasetStats:
    """Per-label counts for one dataset or a collection of splits."""
    if isinstance(datasets, LabeledDataset):
        datasets = [datasets]
    datasets = list(datasets)
    labels = sorted({l for ds in datasets for l in ds.label_set})
    by_split: dict[str, dict[int, int]] = {}
    for ds in datasets:
        counts = by_split.setdefault(ds.split, {l: 0 for l in labels})
        for d in ds.documents:
            counts[d.label] += 1
    return DatasetStats(tuple(labels), by_split)


def balanced_subsample(ds: LabeledDataset, per_class: int, seed: int) -> LabeledDataset:
    """Draw exactly ``per_class`` documents from every label without replacement."""
    if per_class < 0:
        raise DataError("per_class must be non-negative")
    rng = np.random.default_rng(seed)
    labels = ds.labels
    picked: list[int] = []
    for l in ds.label_set:
        members = np.flatnonzero(labels == l)
        if len(members) < per_class:
            raise DataError(f"label {l} has {len(members)} documents, fewer than per_class={per_class}")
        picked.extend(rng.choice(members, size=per_class, replace=False).tolist())
    order = rng.permutation(len(picked))
    docs = tuple(ds.documents[picked[i]] for i in order)
    return LabeledDataset(docs, ds.label_set, ds.split)
