"""
Shared fixtures: a synthetic corpus, a tiny model and calibration data.
"""

import pytest

from trsp_prune.core.enums import TokenizerMode
from trsp_prune.data.corpus import load_corpus, sample_calibration
from trsp_prune.model.config import ModelConfig
from trsp_prune.model.transformer import ModelState

from .helpers import synthetic_text


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow directional tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def corpus_path(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text(synthetic_text(), encoding="utf-8")
    return path


@pytest.fixture
def corpus(corpus_path):
    return load_corpus(corpus_path, TokenizerMode.CHAR)


@pytest.fixture
def tiny_config(corpus):
    return ModelConfig(
        n_layers=4, d_model=16, n_heads=2, vocab_size=corpus.tokenizer.vocab_size, max_seq_len=16
    )


@pytest.fixture
def tiny_state(tiny_config):
    return ModelState.initialize(tiny_config, seed=0)


@pytest.fixture
def calib(corpus):
    return sample_calibration(corpus, n=8, seq_len=16, seed=0)
