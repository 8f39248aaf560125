import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.pipeline import make_pipeline

from decfd.config import RunConfig
from decfd.estimator import NeuralTopicModel, TopicCausalClassifier

TINY = dict(n_topics=3, ntm_hidden=8, d_model=8, n_heads=2, n_layers=1, d_ff=8, max_len=32, lr=1e-2, epochs=2)


def _texts(small_corpus, split="train"):
    ds = small_corpus[split]
    return [d.raw_text for d in ds], ds.labels


def test_get_params_round_trip():
    clf = TopicCausalClassifier(**TINY, random_state=5)
    params = clf.get_params()
    assert params["random_state"] == 5 and params["n_topics"] == 3
    assert clone(clf).get_params() == params
    cfg = clf.run_config()
    assert cfg == RunConfig(**TINY, seed=5)
    assert TopicCausalClassifier.from_config(cfg).get_params() == params


def test_classifier_fit_predict(small_corpus):
    X, y = _texts(small_corpus)
    Xv, yv = _texts(small_corpus, "val")
    clf = TopicCausalClassifier(**TINY).fit(X, y, Xv, yv)
    assert clf.classes_.tolist() == [0, 1] and clf.n_iter_ == 2
    proba = clf.predict_proba(Xv)
    assert proba.shape == (len(Xv), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(clf.predict(Xv), (proba[:, 1] >= 0.5).astype(int))
    assert clf.decision_function(Xv).shape == (len(Xv),)
    theta = clf.transform(Xv)
    assert theta.shape == (len(Xv), 3)
    assert 0 <= clf.score(Xv, yv) <= 1
    # deterministic given random_state
    again = TopicCausalClassifier(**TINY).fit(X, y, Xv, yv)
    np.testing.assert_array_equal(again.predict_proba(Xv), proba)


def test_classifier_accepts_tokens_and_datasets(small_corpus):
    ds = small_corpus["train"]
    clf = TopicCausalClassifier(**{**TINY, "epochs": 1}).fit(ds, ds.labels)
    toks = [list(d.tokens) for d in small_corpus["val"]]
    assert clf.predict(toks).shape == (len(toks),)


def test_classifier_validation(small_corpus):
    X, y = _texts(small_corpus)
    with pytest.raises(ValueError):
        TopicCausalClassifier(**TINY).fit(X, y[:-1])
    with pytest.raises(ValueError):
        TopicCausalClassifier(**TINY).fit(X, np.zeros(len(X), dtype=int))
    with pytest.raises(TypeError):
        TopicCausalClassifier(**TINY).fit("a single string", [1])
    with pytest.raises(NotFittedError):
        TopicCausalClassifier(**TINY).predict(X)


def test_topic_model_on_count_matrix(small_corpus):
    X, _ = _texts(small_corpus)
    counts = CountVectorizer().fit_transform(X)
    ntm = NeuralTopicModel(n_topics=4, hidden=16, epochs=3, random_state=1).fit(counts)
    theta = ntm.transform(counts)
    assert theta.shape == (len(X), 4)
    np.testing.assert_allclose(theta.sum(axis=1), 1.0, atol=1e-12)
    assert ntm.components_.shape == (4, counts.shape[1])
    assert ntm.loss_curve_[-1] < ntm.loss_curve_[0]
    with pytest.raises(ValueError):
        ntm.transform(counts[:, :5])
    assert len(ntm.top_words(3)[0]) == 3


def test_topic_model_on_texts_and_pipeline(small_corpus):
    X, _ = _texts(small_corpus)
    ntm = NeuralTopicModel(n_topics=3, hidden=8, epochs=1).fit(X)
    words = ntm.top_words(2)
    assert all(isinstance(w, str) for row in words for w in row)
    pipe = make_pipeline(CountVectorizer(), NeuralTopicModel(n_topics=3, hidden=8, epochs=1))
    assert pipe.fit_transform(X).shape == (len(X), 3)
    with pytest.raises(ValueError):
        NeuralTopicModel().fit(-np.ones((2, 3)))
