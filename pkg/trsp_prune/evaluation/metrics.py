"""
Perplexity and per-layer input/output cosine similarity.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..core import ops
from ..core.errors import DataError
from ..data.corpus import CalibrationSet
from ..model.transformer import LayerIndexError, ModelState, forward

logger = logging.getLogger(__name__)


def _windows(size: int, seq_len: int, stride: int) -> List[int]:
    return list(range(0, size - seq_len + 1, stride))


def perplexity(
    state: ModelState,
    tokens: np.ndarray,
    seq_len: Optional[int] = None,
    stride: Optional[int] = None,
    batch_size: int = 16,
) -> float:
    """
    ``exp`` of the mean next-token NLL over windows of ``tokens``.

    Windows start every ``stride`` tokens (default: ``seq_len``, i.e. non-overlapping). With a
    smaller stride each target token is scored once, by the first window that predicts it.
    A split shorter than ``seq_len`` is scored as a single window.

    Raises:
        DataError: If the split has fewer than two tokens
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size < 2:
        raise DataError(f"Evaluation split has {tokens.size} tokens; need at least 2")
    seq_len = min(seq_len or state.config.max_seq_len, state.config.max_seq_len, tokens.size)
    stride = stride or seq_len
    if not 1 <= stride <= seq_len:
        raise DataError(f"Stride must be in [1, {seq_len}], got {stride}")

    starts = _windows(tokens.size, seq_len, stride)
    total, count = 0.0, 0
    scored_until = 0
    for first in range(0, len(starts), batch_size):
        chunk = starts[first : first + batch_size]
        batch = np.stack([tokens[s : s + seq_len] for s in chunk])
        nll = ops.token_nll(forward(state, batch).logits.data, batch)
        for row, start in zip(nll, chunk):
            # column j predicts token start + j + 1
            skip = max(0, scored_until - start - 1)
            total += float(row[skip:].sum())
            count += row.size - skip
            scored_until = start + seq_len
    return math.exp(total / count)


def per_vector_cosine(x_in: np.ndarray, x_out: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Cosine similarity of every trailing-axis vector pair.

    Pairs where either vector has zero norm contribute 0.

    Returns:
        (flattened similarities, number of zero-norm pairs)
    """
    if x_in.shape != x_out.shape:
        raise ValueError(f"Shapes differ: {x_in.shape} vs {x_out.shape}")
    a = x_in.reshape(-1, x_in.shape[-1])
    b = x_out.reshape(-1, x_out.shape[-1])
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    zero = denom == 0.0
    sims = np.zeros(a.shape[0])
    sims[~zero] = np.einsum("ij,ij->i", a[~zero], b[~zero]) / denom[~zero]
    return np.clip(sims, -1.0, 1.0), int(zero.sum())


def cosine_similarity(x_in: np.ndarray, x_out: np.ndarray) -> float:
    """Mean per-vector cosine similarity over batch and positions."""
    sims, zero = per_vector_cosine(np.asarray(x_in), np.asarray(x_out))
    if zero:
        logger.warning("%d zero-norm vectors counted as similarity 0", zero)
    return float(sims.mean())


@dataclass
class SimilarityTrace:
    """
    Mean input/output cosine similarity per original layer index.

    Attributes:
        values: Layer index -> mean similarity
        zero_norm: Layer index -> number of zero-norm vector pairs
    """

    values: Dict[int, float] = field(default_factory=dict)
    zero_norm: Dict[int, int] = field(default_factory=dict)

    def mean(self, layers: Iterable[int]) -> float:
        selected = [self.values[i] for i in layers if i in self.values]
        return float(np.mean(selected)) if selected else float("nan")

    def to_dict(self) -> dict:
        return {
            "values": {str(k): v for k, v in sorted(self.values.items())},
            "zero_norm": {str(k): v for k, v in sorted(self.zero_norm.items())},
        }


def cosine_similarity_trace(
    state: ModelState,
    calib: CalibrationSet,
    layers: Optional[Iterable[int]] = None,
    batch_size: int = 8,
) -> SimilarityTrace:
    """
    Mean ``CosSim(X_in^i, X_out^i)`` over every calibration vector for each requested layer.

    Args:
        state: Model to trace
        calib: Calibration sequences
        layers: Original layer indices (default: every unmasked layer)
        batch_size: Sequences per forward

    Raises:
        LayerIndexError: If a requested layer is masked
    """
    layers = list(state.active_layers if layers is None else layers)
    for idx in layers:
        state.position_of(idx)
        if idx in state.mask_set:
            raise LayerIndexError(f"Layer {idx} is masked; its output is undefined")

    sums = {i: 0.0 for i in layers}
    zeros = {i: 0 for i in layers}
    count = 0
    for start in range(0, calib.n_sequences, batch_size):
        batch = calib.tokens[start : start + batch_size]
        trace = forward(state, batch, trace=True, trace_layers=layers).trace
        for idx in layers:
            sims, zero = per_vector_cosine(trace.inputs[idx].data, trace.outputs[idx].data)
            sums[idx] += float(sims.sum())
            zeros[idx] += zero
        count += batch.shape[0] * batch.shape[1]

    result = SimilarityTrace(
        values={i: sums[i] / count for i in layers}, zero_norm=dict(zeros)
    )
    total_zero = sum(zeros.values())
    if total_zero:
        logger.warning("%d zero-norm activation vectors counted as similarity 0", total_zero)
    return result
