"""scikit-learn compatible wrappers.

``TopicCausalClassifier`` trains the full pipeline from raw texts.
``NeuralTopicModel`` is the deconfounded topic model on its own and behaves
like any sklearn transformer (e.g. after a ``CountVectorizer``).
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import ntm as ntm_mod
from .config import RunConfig
from .corpus import Document, Vocab, bow_matrix, build_vocab
from .model import make_batch
from .nn import AdamState, adam_step, no_grad, zero_grad
from .runner import train_run
from .validation import as_documents, dataset_of, is_count_matrix


class TopicCausalClassifier(ClassifierMixin, BaseEstimator):
    """Topic-fused text encoder with a prototype-based intervention head.

    Every constructor argument maps onto a :class:`~decfd.config.RunConfig`
    key (``random_state`` is ``seed``). ``vocab`` may pin a prebuilt
    vocabulary; otherwise one is built from the training texts.
    """

    def __init__(
        self,
        n_topics=15,
        ntm_hidden=256,
        decoder_relu=True,
        gamma_max=0.25,
        warmup_steps=1000,
        eps_cos=1e-6,
        d_model=64,
        n_layers=2,
        n_heads=4,
        d_ff=128,
        max_len=128,
        ln_eps=1e-5,
        lambda_ntm=0.5,
        momentum=0.9,
        threshold=0.5,
        batch_size=16,
        epochs=50,
        lr=1e-5,
        lr_warmup=0,
        weight_decay=1e-6,
        beta1=0.9,
        beta2=0.999,
        adam_eps=1e-8,
        min_count=1,
        max_vocab=0,
        stopwords=False,
        no_ntm=False,
        no_deconf_tm=False,
        no_debias_cfd=False,
        dtype="float64",
        debug=False,
        random_state=0,
        vocab=None,
    ):
        self.n_topics = n_topics
        self.ntm_hidden = ntm_hidden
        self.decoder_relu = decoder_relu
        self.gamma_max = gamma_max
        self.warmup_steps = warmup_steps
        self.eps_cos = eps_cos
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.max_len = max_len
        self.ln_eps = ln_eps
        self.lambda_ntm = lambda_ntm
        self.momentum = momentum
        self.threshold = threshold
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.lr_warmup = lr_warmup
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.min_count = min_count
        self.max_vocab = max_vocab
        self.stopwords = stopwords
        self.no_ntm = no_ntm
        self.no_deconf_tm = no_deconf_tm
        self.no_debias_cfd = no_debias_cfd
        self.dtype = dtype
        self.debug = debug
        self.random_state = random_state
        self.vocab = vocab

    @classmethod
    def from_config(cls, cfg: RunConfig, **kwargs) -> TopicCausalClassifier:
        values = dataclasses.asdict(cfg)
        values["random_state"] = values.pop("seed")
        values.update(kwargs)
        return cls(**values)

    def run_config(self) -> RunConfig:
        params = self.get_params(deep=False)
        params.pop("vocab")
        params["seed"] = params.pop("random_state")
        return RunConfig(**params)

    def fit(self, X, y, X_val=None, y_val=None):
        cfg = self.run_config()
        docs = as_documents(X, y)
        self.classes_ = np.unique([d.label for d in docs])
        if len(self.classes_) < 2:
            raise ValueError("TopicCausalClassifier needs at least two classes in y")
        train = dataset_of(docs, self.classes_.tolist(), "train")
        val = None
        if X_val is not None:
            val = dataset_of(as_documents(X_val, y_val, "val"), self.classes_.tolist(), "val")
        self.trainer_, self.history_ = train_run(cfg, train, val, vocab=self.vocab)
        self.vocab_ = self.trainer_.vocab
        self.n_iter_ = self.trainer_.epoch
        return self

    @property
    def net_(self):
        return self.trainer_.model

    def _batches(self, X):
        check_is_fitted(self, "trainer_")
        filler = int(self.classes_[0])
        docs = [Document(d.id, d.tokens, filler, d.raw_text) for d in as_documents(X)]
        t = self.trainer_
        for start in range(0, len(docs), self.batch_size):
            yield make_batch(docs[start:start + self.batch_size], t.vocab, self.net_.label_set,
                             t.stopwords, self.net_.dtype)

    def decision_function(self, X) -> np.ndarray:
        out = []
        with no_grad():
            for b in self._batches(X):
                out.append(self.net_.forward(b, None).logits.data)
        return np.concatenate(out) if out else np.zeros(0)

    def predict_proba(self, X) -> np.ndarray:
        probs = [self.net_.predict_proba(b) for b in self._batches(X)]
        if not probs:
            return np.zeros((0, len(self.classes_)))
        p = np.concatenate(probs)
        return np.column_stack([1.0 - p, p]) if p.ndim == 1 else p

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        if len(self.classes_) == 2:
            return self.classes_[(proba[:, 1] >= self.threshold).astype(int)]
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Topic mixtures (posterior-mean theta) for each document."""
        check_is_fitted(self, "trainer_")
        docs = as_documents(X)
        return self.net_.theta(bow_matrix(docs, self.vocab_, self.trainer_.stopwords, self.net_.dtype))


class NeuralTopicModel(TransformerMixin, BaseEstimator):
    """Variational topic model trained with the deconfounded objective alone.

    ``fit`` accepts either a ``(n_docs, V)`` count matrix (dense or sparse)
    or raw/tokenized texts, in which case a vocabulary is built.
    ``components_`` is ``phi.T`` with shape ``(n_topics, V)``.
    """

    def __init__(
        self,
        n_topics=15,
        hidden=256,
        decoder_relu=True,
        gamma_max=0.25,
        warmup_steps=1000,
        eps_cos=1e-6,
        batch_size=16,
        epochs=50,
        lr=1e-3,
        weight_decay=1e-6,
        min_count=1,
        max_vocab=0,
        random_state=0,
    ):
        self.n_topics = n_topics
        self.hidden = hidden
        self.decoder_relu = decoder_relu
        self.gamma_max = gamma_max
        self.warmup_steps = warmup_steps
        self.eps_cos = eps_cos
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.min_count = min_count
        self.max_vocab = max_vocab
        self.random_state = random_state

    def _counts(self, X, fitting: bool) -> np.ndarray:
        if is_count_matrix(X):
            X = check_array(X, accept_sparse="csr", dtype=np.float64)
            if hasattr(X, "toarray"):
                X = X.toarray()
            if (X < 0).any():
                raise ValueError("count matrix has negative entries")
            if fitting:
                self.vocab_ = None
            elif X.shape[1] != self.n_features_in_:
                raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
            return X
        docs = as_documents(X)
        if fitting:
            self.vocab_ = build_vocab(docs, self.min_count, self.max_vocab or None)
        elif self.vocab_ is None:
            raise ValueError("model was fitted on a count matrix; pass counts, not texts")
        return bow_matrix(docs, self.vocab_)

    def fit(self, X, y=None):
        counts = self._counts(X, fitting=True)
        n, V = counts.shape
        if n == 0:
            raise ValueError("cannot fit on zero documents")
        self.n_features_in_ = V
        rng = np.random.default_rng([self.random_state, 0])
        self.params_ = ntm_mod.NtmParams(V, self.n_topics, self.hidden, rng)
        schedule = ntm_mod.GammaSchedule(self.warmup_steps, self.gamma_max)
        state = AdamState(lr=self.lr, weight_decay=self.weight_decay)
        params = self.params_.params()
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = np.random.default_rng([self.random_state, 1, epoch]).permutation(n)
            noise = np.random.default_rng([self.random_state, 2, epoch])
            losses = []
            for start in range(0, n, self.batch_size):
                x = counts[order[start:start + self.batch_size]]
                eps = noise.standard_normal((len(x), self.n_topics))
                zero_grad(params)
                st = ntm_mod.forward(self.params_, x, eps)
                loss = ntm_mod.ntm_loss(self.params_, x, st, schedule(state.t), self.eps_cos, self.decoder_relu)
                loss.total.backward()
                adam_step(params, state)
                losses.append(loss.total.item())
            self.loss_curve_.append(float(np.mean(losses)))
        self.n_iter_ = state.t
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return ntm_mod.infer_theta(self.params_, self._counts(X, fitting=False))

    @property
    def components_(self) -> np.ndarray:
        check_is_fitted(self, "params_")
        return self.params_.phi.data.T.copy()

    def top_words(self, k: int = 10) -> list[list]:
        ids = ntm_mod.top_words(self.params_.phi, k)
        if self.vocab_ is None:
            return ids
        return [[self.vocab_.id_to_token[i] for i in row] for row in ids]
