"""Input coercion shared by the estimators."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.utils.validation import column_or_1d

from .corpus import Document, LabeledDataset, tokenize


def as_documents(X, y=None, prefix: str = "doc") -> list[Document]:
    """Accept a LabeledDataset, Documents, raw strings or pre-tokenized sequences."""
    if isinstance(X, LabeledDataset):
        docs = list(X.documents)
    else:
        if isinstance(X, (str, bytes)):
            raise TypeError("expected an iterable of documents, got a single string")
        docs = []
        for i, item in enumerate(X):
            if isinstance(item, Document):
                docs.append(item)
            elif isinstance(item, str):
                docs.append(Document(f"{prefix}-{i}", tuple(tokenize(item)), 0, item))
            elif isinstance(item, Iterable):
                toks = tuple(str(t) for t in item)
                docs.append(Document(f"{prefix}-{i}", toks, 0, " ".join(toks)))
            else:
                raise TypeError(f"cannot interpret element {i} of type {type(item).__name__} as a document")
    if y is not None:
        y = check_labels(y, len(docs))
        docs = [Document(d.id, d.tokens, int(l), d.raw_text) for d, l in zip(docs, y)]
    return docs


def check_labels(y, n: int) -> np.ndarray:
    y = column_or_1d(np.asarray(y), warn=True)
    if len(y) != n:
        raise ValueError(f"X has {n} documents but y has {len(y)} labels")
    if not np.issubdtype(y.dtype, np.integer):
        as_int = y.astype(np.int64)
        if not np.array_equal(as_int, y):
            raise ValueError("labels must be integers")
        y = as_int
    return y.astype(np.int64)


def is_count_matrix(X) -> bool:
    if hasattr(X, "tocsr"):
        return True
    if isinstance(X, np.ndarray):
        return X.ndim == 2 and np.issubdtype(X.dtype, np.number)
    return False


def dataset_of(docs: Sequence[Document], label_set, split: str = "train") -> LabeledDataset:
    return LabeledDataset(tuple(docs), tuple(label_set), split)
