"""
Layer selection (two-stage regularization and baselines) and the pruning pipeline.
"""

from .baselines import (
    BASELINES,
    LossImpactStrategy,
    RandomStrategy,
    SelectionStrategy,
    SimilarityRankStrategy,
    get_strategy,
    loss_impact_selection,
    random_selection,
    similarity_rank_selection,
)
from .pipeline import (
    PruneConfig,
    PruneOutcome,
    layers_to_prune,
    run_baseline,
    run_strategy,
    run_trsp,
)
from .trsp import (
    PruneSet,
    SelectionError,
    SelectionHistory,
    SelectionRecord,
    Stage1Config,
    Stage2Config,
    Stage2Result,
    difference_penalty,
    iterative_selection,
    learn_layer_weights,
    max_consecutive_run,
    measure_penalty,
    one_shot_selection,
    select_min_gate,
    stage1_loss,
    stage2_regularize,
)

__all__ = [
    "BASELINES",
    "LossImpactStrategy",
    "PruneConfig",
    "PruneOutcome",
    "PruneSet",
    "RandomStrategy",
    "SelectionError",
    "SelectionHistory",
    "SelectionRecord",
    "SelectionStrategy",
    "SimilarityRankStrategy",
    "Stage1Config",
    "Stage2Config",
    "Stage2Result",
    "difference_penalty",
    "get_strategy",
    "iterative_selection",
    "layers_to_prune",
    "learn_layer_weights",
    "loss_impact_selection",
    "max_consecutive_run",
    "measure_penalty",
    "one_shot_selection",
    "random_selection",
    "run_baseline",
    "run_strategy",
    "run_trsp",
    "select_min_gate",
    "similarity_rank_selection",
    "stage1_loss",
    "stage2_regularize",
]
