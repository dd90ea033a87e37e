"""
Central finite-difference oracle for analytic gradients.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .tensor import Parameter, Tape, Tensor


@dataclass
class GradCheckResult:
    """
    Outcome of a gradient check.

    Attributes:
        max_rel_error: Largest relative error over all sampled entries
        samples: (parameter name, flat index, analytic, numeric) per sampled entry
    """

    max_rel_error: float
    samples: List[Tuple[str, int, float, float]] = field(default_factory=list)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    n_samples: int = 50,
    h: float = 1e-5,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare backward() gradients with central differences on sampled entries.

    Args:
        loss_fn: Deterministic function building the scalar loss from the current parameters
        params: Parameters to sample entries from (uniformly over all entries)
        n_samples: Number of entries to check
        h: Finite-difference step
        seed: Sampling seed

    Returns:
        GradCheckResult with the maximum relative error
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    sizes = np.array([p.size for p in params])
    rng = np.random.default_rng(seed)
    picks = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    result = GradCheckResult(max_rel_error=0.0)
    for flat in np.sort(picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        index = int(flat - offsets[which])
        param = params[which]
        view = param.data.reshape(-1)
        original = view[index]
        view[index] = original + h
        plus = loss_fn().item()
        view[index] = original - h
        minus = loss_fn().item()
        view[index] = original
        numeric = (plus - minus) / (2.0 * h)
        exact = float(analytic[which].reshape(-1)[index])
        result.samples.append((param.name, index, exact, numeric))
        result.max_rel_error = max(result.max_rel_error, relative_error(exact, numeric))
    return result
