"""
Binary checkpoint format.

Layout (all integers little-endian)::

    b"TRSP"                 magic
    u32                     format version
    u32 + bytes             UTF-8 JSON header (model config, mask set, tokenizer, metadata)
    u32                     number of tensor records
    per record:             u16 name length, name, u32 rank, u32 extents..., float64 data
    u32 + u32...            original layer index of every stored layer

The JSON header is written with sorted keys and no whitespace, so saving a loaded checkpoint
reproduces the file byte for byte.
"""

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple, Union

import numpy as np

from ..core.errors import DataError
from ..core.tensor import Parameter
from .config import ModelConfig
from .transformer import LayerParams, ModelState

logger = logging.getLogger(__name__)

MAGIC = b"TRSP"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


class CheckpointFormatError(DataError):
    """Raised when a checkpoint file is malformed or inconsistent."""


@dataclass
class Checkpoint:
    """
    Everything stored in a checkpoint file.

    Attributes:
        state: The model
        tokenizer: Tokenizer description (see ``Tokenizer.to_dict``) or None
        meta: Free-form metadata (training provenance, prune set, ...)
    """

    state: ModelState
    tokenizer: Optional[dict] = None
    meta: dict = field(default_factory=dict)


def tensor_record_nbytes(name: str, shape: Tuple[int, ...]) -> int:
    """Size of one tensor record in the file."""
    payload = 8 * int(np.prod(shape, dtype=np.int64))
    return 2 + len(name.encode("utf-8")) + 4 + 4 * len(shape) + payload


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, ff, v = config.d_model, config.ff_dim, config.vocab_size
    per_layer = {
        "ln1_weight": (d,),
        "ln1_bias": (d,),
        "wq": (d, d),
        "bq": (d,),
        "wk": (d, d),
        "bk": (d,),
        "wv": (d, d),
        "bv": (d,),
        "wo": (d, d),
        "bo": (d,),
        "ln2_weight": (d,),
        "ln2_bias": (d,),
        "w_fc": (d, ff),
        "b_fc": (ff,),
        "w_proj": (ff, d),
        "b_proj": (d,),
    }
    shapes: Dict[str, Tuple[int, ...]] = {"tok_emb": (v, d), "pos_emb": (config.max_seq_len, d)}
    for pos in range(config.n_layers):
        for key, shape in per_layer.items():
            shapes[f"layers.{pos}.{key}"] = shape
    shapes["ln_f_weight"] = (d,)
    shapes["ln_f_bias"] = (d,)
    if not config.tied_head:
        shapes["head"] = (d, v)
    shapes["gates"] = (config.n_layers,)
    return shapes


def _header(state: ModelState, tokenizer: Optional[dict], meta: Optional[dict]) -> bytes:
    blob = {
        "model": state.config.to_dict(),
        "mask_set": sorted(state.mask_set),
        "tokenizer": tokenizer,
        "meta": meta or {},
    }
    return json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_checkpoint(
    state: ModelState,
    stream: BinaryIO,
    tokenizer: Optional[dict] = None,
    meta: Optional[dict] = None,
) -> int:
    """Serialise ``state`` into ``stream``; returns the number of bytes written."""
    header = _header(state, tokenizer, meta)
    written = stream.write(MAGIC)
    written += stream.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    written += stream.write(header)
    named = state.named_parameters()
    written += stream.write(struct.pack("<I", len(named)))
    for name, param in named.items():
        encoded = name.encode("utf-8")
        written += stream.write(struct.pack("<H", len(encoded)))
        written += stream.write(encoded)
        written += stream.write(struct.pack("<I", param.ndim))
        written += stream.write(struct.pack(f"<{param.ndim}I", *param.shape))
        written += stream.write(param.data.astype("<f8", copy=False).tobytes(order="C"))
    written += stream.write(struct.pack("<I", len(state.layer_ids)))
    written += stream.write(struct.pack(f"<{len(state.layer_ids)}I", *state.layer_ids))
    return written


def save_checkpoint(
    state: ModelState,
    path: PathLike,
    tokenizer: Optional[dict] = None,
    meta: Optional[dict] = None,
) -> int:
    """
    Write a checkpoint file.

    Args:
        state: Model to save
        path: Destination file
        tokenizer: Optional tokenizer description
        meta: Optional metadata

    Returns:
        Number of bytes written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        size = write_checkpoint(state, f, tokenizer, meta)
    logger.info("Wrote checkpoint %s (%d layers, %d bytes)", path, state.n_layers, size)
    return size


class _Reader:
    def __init__(self, data: bytes):
        self._buf = io.BytesIO(data)

    def take(self, n: int) -> bytes:
        chunk = self._buf.read(n)
        if len(chunk) != n:
            raise CheckpointFormatError("Checkpoint is truncated")
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def at_end(self) -> bool:
        return self._buf.read(1) == b""


def read_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read a checkpoint file.

    Raises:
        CheckpointFormatError: On a wrong magic, unsupported version, truncation or when the
            stored tensors disagree with the stored config
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {path}: {e}") from e
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path} is not a TRSP checkpoint (bad magic)")
    version, header_len = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"Unsupported checkpoint version {version}; this build reads version {FORMAT_VERSION}"
        )
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError) as e:
        raise CheckpointFormatError(f"Corrupt checkpoint header: {e}") from e

    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(8 * n), dtype="<f8").reshape(shape).copy()
    (n_ids,) = reader.unpack("<I")
    layer_ids = list(reader.unpack(f"<{n_ids}I")) if n_ids else []
    if not reader.at_end():
        raise CheckpointFormatError("Trailing bytes after checkpoint payload")

    expected = expected_shapes(config)
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointFormatError(f"Tensor set mismatch: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointFormatError(
                f"Tensor {name} has shape {tensors[name].shape}, config implies {shape}"
            )
    if len(layer_ids) != config.n_layers:
        raise CheckpointFormatError(
            f"Provenance lists {len(layer_ids)} layers, config has {config.n_layers}"
        )

    def param(name: str) -> Parameter:
        return Parameter(tensors[name], name)

    layers = []
    for pos in range(config.n_layers):
        prefix = f"layers.{pos}."
        layers.append(
            LayerParams(
                **{
                    key[len(prefix) :]: param(key)
                    for key in expected
                    if key.startswith(prefix)
                }
            )
        )
    state = ModelState(
        config=config,
        tok_emb=param("tok_emb"),
        pos_emb=param("pos_emb"),
        layers=layers,
        ln_f_weight=param("ln_f_weight"),
        ln_f_bias=param("ln_f_bias"),
        head=None if config.tied_head else param("head"),
        gates=param("gates"),
        layer_ids=layer_ids,
        mask_set=header.get("mask_set", []),
    )
    return Checkpoint(state=state, tokenizer=header.get("tokenizer"), meta=header.get("meta", {}))


def load_checkpoint(path: PathLike) -> ModelState:
    """Read only the model from a checkpoint file."""
    return read_checkpoint(path).state
