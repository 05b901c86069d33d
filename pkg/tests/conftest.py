"""Shared fixtures: tiny 64-bit models and toy corpora."""

import numpy as np
import pytest

from disco.data import TaskSpec, generate_corpus
from disco.model import Model, ModelConfig
from disco.numerics import RngStream

TINY = dict(num_layers_enc=1, num_layers_dec=2, model_dim=8, hidden_dim=16, num_heads=2,
            vocab_size_src=12, vocab_size_tgt=12, max_positions=10, max_length_bins=10,
            dropout=0.0, label_smoothing=0.1)


def tiny_config(**overrides):
    values = dict(TINY)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def tiny_model():
    return Model(tiny_config(), seed=3)


@pytest.fixture(params=["disco", "cmlm", "ar"])
def any_model(request):
    return Model(tiny_config(decoder=request.param), seed=5)


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def gen():
    return np.random.default_rng(0)


@pytest.fixture
def copy_corpus():
    spec = TaskSpec("copy", vocab_size=7, min_length=1, max_length=5, seed=2)
    return generate_corpus(spec, {"train": 40, "dev": 6, "test": 6}, max_positions=10)


@pytest.fixture
def lexicon_corpus():
    spec = TaskSpec("ambiguous-lexicon", vocab_size=8, min_length=2, max_length=6, seed=4)
    return generate_corpus(spec, {"train": 60, "dev": 8, "test": 8}, max_positions=16)
