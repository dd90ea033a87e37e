"""
Model and corpus builders shared by the tests.
"""

import numpy as np

from trsp_prune.model.config import ModelConfig
from trsp_prune.model.transformer import ModelState

WORDS = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "to", "red", "big", "box"]


def synthetic_text(n_sentences: int = 600, seed: int = 0) -> str:
    """Sentences over a small word list; structured enough for a tiny model to learn."""
    rng = np.random.default_rng(seed)
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(3, 7))
        sentences.append(" ".join(rng.choice(WORDS, size=length)) + ".")
    return " ".join(sentences) + "\n"


def random_state(n_layers: int = 4, d_model: int = 16, vocab: int = 11, seed: int = 0, **kwargs):
    """Model with non-trivial biases and layer norms so that every parameter matters."""
    config = ModelConfig(
        n_layers=n_layers,
        d_model=d_model,
        n_heads=2,
        vocab_size=vocab,
        max_seq_len=kwargs.pop("max_seq_len", 12),
        init_std=0.3,
        **kwargs,
    )
    state = ModelState.initialize(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in state.named_parameters().items():
        if name.endswith(("bias", "_weight")) or name.split(".")[-1].startswith("b"):
            p.data += rng.normal(0.0, 0.1, size=p.shape)
    return state


def random_tokens(state: ModelState, batch: int = 2, seq: int = 8, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, state.config.vocab_size, size=(batch, seq))
