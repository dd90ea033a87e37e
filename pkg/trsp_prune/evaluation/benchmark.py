"""
Token-generation throughput and prompt-processing latency.
"""

import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from ..core.errors import ConfigError
from ..model.transformer import ModelState, forward

logger = logging.getLogger(__name__)


@dataclass
class BenchConfig:
    """
    Attributes:
        batch: Sequences processed together
        gen_len: Tokens generated per sequence
        prompt_len: Prompt length of the full-sequence forward
        repeats: Timed repetitions (the median is reported)
        warmup: Untimed runs before measuring
        seed: Seed of the random prompts
    """

    batch: int = 8
    gen_len: int = 32
    prompt_len: int = 64
    repeats: int = 5
    warmup: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.batch, self.gen_len, self.prompt_len, self.repeats) < 1 or self.warmup < 0:
            raise ConfigError("bench.batch, gen_len, prompt_len and repeats must be >= 1")


@dataclass
class BenchmarkResult:
    """
    Attributes:
        tokens_per_second: Generated tokens (batch x gen_len) per second of decoding
        latency_ms: Median wall time of one full-prompt forward
        decode_ms: Median wall time of the whole decode loop
        decode_samples: Per-repeat decode times in seconds
        prompt_samples: Per-repeat prompt times in seconds
    """

    tokens_per_second: float
    latency_ms: float
    decode_ms: float
    n_layers: int
    decode_samples: List[float] = field(default_factory=list)
    prompt_samples: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _decode(state: ModelState, first: np.ndarray, prompt_len: int, gen_len: int) -> np.ndarray:
    # one single-token forward per generated position
    last = state.config.max_seq_len - 1
    token = first
    for t in range(gen_len):
        logits = forward(state, token, start_pos=min(prompt_len + t, last)).logits.data
        token = logits[:, -1, :].argmax(axis=-1)[:, None]
    return token


def benchmark(
    state: ModelState,
    batch: int = 8,
    gen_len: int = 32,
    prompt_len: int = 64,
    repeats: int = 5,
    warmup: int = 1,
    seed: int = 0,
) -> BenchmarkResult:
    """
    Time sequential single-token decoding and one full-prompt forward.

    Warmup runs are executed and discarded; the reported values are medians over ``repeats``.

    Raises:
        ConfigError: If the prompt does not fit the model context
    """
    config = BenchConfig(batch, gen_len, prompt_len, repeats, warmup, seed)
    if prompt_len > state.config.max_seq_len:
        raise ConfigError(
            f"bench.prompt_len {prompt_len} exceeds the model context {state.config.max_seq_len}"
        )
    rng = np.random.default_rng(config.seed)
    prompt = rng.integers(0, state.config.vocab_size, size=(batch, prompt_len))
    first = prompt[:, -1:]

    for _ in range(config.warmup):
        forward(state, prompt)
        _decode(state, first, prompt_len, gen_len)

    prompt_samples, decode_samples = [], []
    for _ in range(config.repeats):
        start = time.perf_counter()
        forward(state, prompt)
        prompt_samples.append(time.perf_counter() - start)
        start = time.perf_counter()
        _decode(state, first, prompt_len, gen_len)
        decode_samples.append(time.perf_counter() - start)

    decode = statistics.median(decode_samples)
    result = BenchmarkResult(
        tokens_per_second=batch * gen_len / decode,
        latency_ms=1000.0 * statistics.median(prompt_samples),
        decode_ms=1000.0 * decode,
        n_layers=state.n_layers,
        decode_samples=decode_samples,
        prompt_samples=prompt_samples,
    )
    logger.info(
        "%d layers: %.1f tokens/s, prompt latency %.2f ms",
        state.n_layers,
        result.tokens_per_second,
        result.latency_ms,
    )
    return result
