"""
Corpus loading, train/validation/test splitting and calibration sampling.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.enums import TokenizerMode
from ..core.errors import ConfigError, DataError
from .tokenizer import Tokenizer

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.9, 0.05, 0.05)


def fingerprint(tokens: np.ndarray) -> str:
    """sha256 of the token ids; identifies a split in reports."""
    return hashlib.sha256(np.ascontiguousarray(tokens, dtype="<i8").tobytes()).hexdigest()


@dataclass
class Corpus:
    """
    A tokenized text with contiguous train/validation/test splits.

    Attributes:
        name: Source name (file name)
        tokenizer: Tokenizer that produced ``tokens``
        tokens: The whole token stream
        boundaries: End offsets of the train and validation splits
        fractions: Requested split fractions
    """

    name: str
    tokenizer: Tokenizer
    tokens: np.ndarray
    boundaries: Tuple[int, int]
    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS

    @property
    def train(self) -> np.ndarray:
        return self.tokens[: self.boundaries[0]]

    @property
    def validation(self) -> np.ndarray:
        return self.tokens[self.boundaries[0] : self.boundaries[1]]

    @property
    def test(self) -> np.ndarray:
        return self.tokens[self.boundaries[1] :]

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "validation": self.validation, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"Unknown split {name!r}") from None

    def summary(self) -> dict:
        return {
            "name": self.name,
            "tokenizer": self.tokenizer.mode.value,
            "vocab_size": self.tokenizer.vocab_size,
            "tokens": int(self.tokens.size),
            "train": int(self.train.size),
            "validation": int(self.validation.size),
            "test": int(self.test.size),
            "test_fingerprint": fingerprint(self.test),
        }


def _split_points(
    tokens: np.ndarray, fractions: Sequence[float], byte_mode: bool
) -> Tuple[int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(
            f"data.fractions must be three non-negative values summing to 1, got {fractions}"
        )
    total = int(tokens.size)
    first = math.floor(total * fractions[0] + 1e-9)
    second = first + math.floor(total * fractions[1] + 1e-9)
    if byte_mode:
        # never split inside a multi-byte UTF-8 sequence
        points = []
        for point in (first, second):
            while point < total and (int(tokens[point]) & 0xC0) == 0x80:
                point += 1
            points.append(point)
        first, second = points[0], max(points)
    return first, second


def load_text(path: Union[str, Path]) -> str:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read corpus {path}: {e}") from e
    if not raw:
        raise DataError(f"Corpus {path} is empty")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"Corpus {path} is not valid UTF-8: {e}") from e


def load_corpus(
    path: Union[str, Path],
    mode: TokenizerMode = TokenizerMode.CHAR,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    tokenizer: Optional[Tokenizer] = None,
) -> Corpus:
    """
    Read, tokenize and split a UTF-8 text file.

    Args:
        path: Text file
        mode: Tokenizer mode when no tokenizer is given
        fractions: Train/validation/test fractions
        tokenizer: Existing tokenizer (e.g. from a checkpoint) to reuse

    Returns:
        Corpus with contiguous splits in file order

    Raises:
        DataError: If the file is missing, empty or not valid UTF-8
    """
    text = load_text(path)
    tokenizer = tokenizer or Tokenizer.from_text(text, mode)
    tokens = tokenizer.encode(text)
    boundaries = _split_points(tokens, fractions, tokenizer.mode is TokenizerMode.BYTE)
    corpus = Corpus(
        name=Path(path).name,
        tokenizer=tokenizer,
        tokens=tokens,
        boundaries=boundaries,
        fractions=tuple(fractions),
    )
    logger.info(
        "Loaded corpus %s: %d tokens (train %d / validation %d / test %d)",
        corpus.name,
        tokens.size,
        corpus.train.size,
        corpus.validation.size,
        corpus.test.size,
    )
    return corpus


def random_windows(
    tokens: np.ndarray, batch_size: int, seq_len: int, rng: np.random.Generator
) -> np.ndarray:
    """Independent random windows (overlap allowed), shape batch x seq_len."""
    if tokens.size < seq_len:
        raise DataError(f"Need at least {seq_len} tokens for one sequence, have {tokens.size}")
    starts = rng.integers(0, tokens.size - seq_len + 1, size=batch_size)
    return np.stack([tokens[s : s + seq_len] for s in starts])


@dataclass
class CalibrationSet:
    """
    Non-overlapping windows of the train split that drive both regularization stages.

    Attributes:
        tokens: Token matrix n_sequences x seq_len
        offsets: Start offset of every window in the train split
        seq_len: Window length
        seed: Sampling seed
        source: Name of the corpus the windows come from
    """

    tokens: np.ndarray
    offsets: List[int]
    seq_len: int
    seed: int
    source: str = ""
    split_size: int = 0

    @property
    def n_sequences(self) -> int:
        return int(self.tokens.shape[0])

    def batch(self, step: int, batch_size: int) -> np.ndarray:
        """Deterministic cyclic batch number ``step``."""
        size = min(batch_size, self.n_sequences)
        rows = [(step * size + j) % self.n_sequences for j in range(size)]
        return self.tokens[rows]

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "seed": self.seed,
            "seq_len": self.seq_len,
            "n_sequences": self.n_sequences,
            "offsets": [int(o) for o in self.offsets],
        }

    def export_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_offsets(
        cls, split: np.ndarray, offsets: Sequence[int], seq_len: int, seed: int, source: str = ""
    ) -> "CalibrationSet":
        """Rebuild a calibration set from exported offsets."""
        offsets = [int(o) for o in offsets]
        if any(o < 0 or o + seq_len > split.size for o in offsets):
            raise DataError("Calibration offsets fall outside the train split")
        tokens = np.stack([split[o : o + seq_len] for o in offsets])
        return cls(tokens, offsets, seq_len, seed, source, int(split.size))


def sample_calibration(
    corpus: Union[Corpus, np.ndarray], n: int, seq_len: int, seed: int
) -> CalibrationSet:
    """
    Draw ``n`` non-overlapping windows of ``seq_len`` tokens from the train split.

    Every non-overlapping placement is equally likely: ``n`` distinct slots are drawn from
    ``slack + n`` positions, where ``slack`` is the number of tokens left over.

    Raises:
        DataError: If the train split holds fewer than ``n * seq_len`` tokens
    """
    if isinstance(corpus, Corpus):
        split, source = corpus.train, corpus.name
    else:
        split, source = np.asarray(corpus, dtype=np.int64), ""
    if n < 1 or seq_len < 2:
        raise ConfigError(
            f"calibration needs n >= 1 and seq_len >= 2, got n={n}, seq_len={seq_len}"
        )
    slack = int(split.size) - n * seq_len
    if slack < 0:
        raise DataError(
            f"Train split has {split.size} tokens; {n} windows of {seq_len} need {n * seq_len}"
        )
    rng = np.random.default_rng(seed)
    slots = np.sort(rng.choice(slack + n, size=n, replace=False))
    offsets = [int(c) + k * (seq_len - 1) for k, c in enumerate(slots)]
    calib = CalibrationSet.from_offsets(split, offsets, seq_len, seed, source)
    logger.info("Sampled %d calibration windows of %d tokens (seed %d)", n, seq_len, seed)
    return calib
