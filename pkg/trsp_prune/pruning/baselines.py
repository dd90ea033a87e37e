"""
Related-work layer selection strategies used as comparison arms.

These are simplified "-style" proxies: similarity ranking scores each layer by how little it
changes its input, loss impact greedily removes the layer whose absence hurts the
calibration loss least, random selection is the control.
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Type

import numpy as np

from ..core.enums import StrategyKind
from ..data.corpus import CalibrationSet
from ..evaluation.metrics import cosine_similarity_trace
from ..model.training import mean_loss
from ..model.transformer import ModelState, mask_layer, unmask_layer
from .trsp import PruneSet, SelectionError, check_prune_count

logger = logging.getLogger(__name__)


def similarity_rank_selection(
    state: ModelState, calib: CalibrationSet, n: int, batch_size: int = 8
) -> PruneSet:
    """The ``n`` unmasked layers whose output is most similar to their input."""
    check_prune_count(n, state.n_layers)
    trace = cosine_similarity_trace(state, calib, batch_size=batch_size)
    ranked = sorted(trace.values.items(), key=lambda item: (-item[1], item[0]))
    logger.debug("Similarity ranking %s", ranked)
    return PruneSet([idx for idx, _ in ranked[:n]], [0] * n, StrategyKind.SIMILARITY_RANK.value)


def loss_impact_selection(
    state: ModelState, calib: CalibrationSet, n: int, batch_size: int = 8
) -> PruneSet:
    """
    ``n`` greedy rounds; each masks the layer whose removal gives the lowest calibration loss.

    ``state`` is not modified. Ties go to the lowest index.
    """
    check_prune_count(n, state.n_layers)
    work = state.copy()
    chosen: List[int] = []
    for iteration in range(n):
        losses: Dict[int, float] = {}
        for idx in work.active_layers:
            mask_layer(work, idx)
            losses[idx] = mean_loss(work, calib.tokens, batch_size)
            unmask_layer(work, idx)
        best = min(losses, key=lambda idx: (losses[idx], idx))
        logger.debug("Loss-impact round %d: %s -> layer %d", iteration, losses, best)
        mask_layer(work, best)
        chosen.append(best)
    return PruneSet(chosen, list(range(n)), StrategyKind.LOSS_IMPACT.value)


def random_selection(n_layers: int, n: int, seed: int = 0) -> PruneSet:
    """Uniform ``n``-subset of ``range(n_layers)`` without replacement."""
    if not 0 <= n <= n_layers:
        raise SelectionError(f"Cannot draw {n} of {n_layers} layers")
    rng = np.random.default_rng(seed)
    picked = rng.choice(n_layers, size=n, replace=False)
    return PruneSet([int(i) for i in picked], [0] * n, StrategyKind.RANDOM.value)


class SelectionStrategy(ABC):
    """Interface of a baseline layer selector."""

    kind: StrategyKind

    def __init__(self, seed: int = 0, batch_size: int = 8):
        self.seed = seed
        self.batch_size = batch_size

    @abstractmethod
    def select(self, state: ModelState, calib: CalibrationSet, n: int) -> PruneSet:
        """
        Choose ``n`` layers of ``state`` to remove.

        Args:
            state: Model to inspect (left unmodified)
            calib: Calibration sequences
            n: Number of layers

        Returns:
            Prune set of original layer indices
        """
        pass


class SimilarityRankStrategy(SelectionStrategy):
    kind = StrategyKind.SIMILARITY_RANK

    def select(self, state: ModelState, calib: CalibrationSet, n: int) -> PruneSet:
        return similarity_rank_selection(state, calib, n, self.batch_size)


class LossImpactStrategy(SelectionStrategy):
    kind = StrategyKind.LOSS_IMPACT

    def select(self, state: ModelState, calib: CalibrationSet, n: int) -> PruneSet:
        return loss_impact_selection(state, calib, n, self.batch_size)


class RandomStrategy(SelectionStrategy):
    kind = StrategyKind.RANDOM

    def select(self, state: ModelState, calib: CalibrationSet, n: int) -> PruneSet:
        check_prune_count(n, state.n_layers)
        drawn = random_selection(state.n_layers, n, self.seed)
        return PruneSet(
            [state.layer_ids[pos] for pos in drawn.indices], drawn.iterations, drawn.strategy
        )


BASELINES: Dict[StrategyKind, Type[SelectionStrategy]] = {
    cls.kind: cls for cls in (SimilarityRankStrategy, LossImpactStrategy, RandomStrategy)
}


def get_strategy(kind, seed: int = 0, batch_size: int = 8) -> SelectionStrategy:
    """
    Raises:
        SelectionError: If ``kind`` is not a baseline
    """
    try:
        kind = StrategyKind(kind)
        return BASELINES[kind](seed=seed, batch_size=batch_size)
    except (ValueError, KeyError):
        raise SelectionError(
            f"Unknown baseline {kind!r}; expected one of {[k.value for k in BASELINES]}"
        ) from None
