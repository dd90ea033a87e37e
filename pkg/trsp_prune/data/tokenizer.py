"""
Byte- and character-level tokenizers.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.enums import TokenizerMode
from ..core.errors import DataError

BYTE_VOCAB = 256
BOS_ID = 256
EOS_ID = 257


@dataclass
class Tokenizer:
    """
    Maps text to token ids.

    Byte mode uses the 256 byte values plus two special ids (BOS, EOS). Char mode uses the
    sorted set of characters seen in the corpus it was built from.

    Attributes:
        mode: Tokenizer granularity
        chars: Character vocabulary (char mode only)
    """

    mode: TokenizerMode = TokenizerMode.BYTE
    chars: List[str] = field(default_factory=list)
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = TokenizerMode(self.mode)
        if self.mode is TokenizerMode.CHAR:
            if not self.chars:
                raise DataError("A char tokenizer needs a non-empty vocabulary")
            self._index = {c: i for i, c in enumerate(self.chars)}

    @classmethod
    def from_text(cls, text: str, mode: TokenizerMode = TokenizerMode.CHAR) -> "Tokenizer":
        if TokenizerMode(mode) is TokenizerMode.BYTE:
            return cls(TokenizerMode.BYTE)
        return cls(TokenizerMode.CHAR, sorted(set(text)))

    @property
    def vocab_size(self) -> int:
        if self.mode is TokenizerMode.BYTE:
            return BYTE_VOCAB + 2
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        """
        Tokenize ``text``.

        Raises:
            DataError: In char mode, if ``text`` contains a character outside the vocabulary
        """
        if self.mode is TokenizerMode.BYTE:
            return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
        try:
            return np.fromiter((self._index[c] for c in text), dtype=np.int64, count=len(text))
        except KeyError as e:
            raise DataError(f"Character {e.args[0]!r} is not in the tokenizer vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        ids = [int(i) for i in ids]
        if self.mode is TokenizerMode.BYTE:
            return bytes(i for i in ids if i < BYTE_VOCAB).decode("utf-8", errors="replace")
        return "".join(self.chars[i] for i in ids)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "chars": "".join(self.chars)}

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "Tokenizer":
        if not data:
            return cls(TokenizerMode.BYTE)
        return cls(TokenizerMode(data["mode"]), list(data.get("chars", "")))
