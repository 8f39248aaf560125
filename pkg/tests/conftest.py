import numpy as np
import pytest

from decfd.corpus import build_vocab
from decfd.synth import SynthConfig, gen_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return gen_corpus(SynthConfig(n_docs=160, n_val=40, n_test=120, balanced_per_class=10, seed=3))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(small_corpus["train"].documents, max_size=200)
