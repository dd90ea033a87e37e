"""
Enumerations shared across the TRSP pruning toolkit.
"""

from enum import Enum


class NormType(Enum):
    """Norm used for the stage-2 input/output difference penalty."""

    L1 = "l1"
    L2 = "l2"


class SelectionMode(Enum):
    """How TRSP learns layer weights before choosing the prune set."""

    ITERATIVE = "iterative"
    ONE_SHOT = "one_shot"


class StrategyKind(Enum):
    """Layer selection strategies available to the pruning pipeline."""

    TRSP = "trsp"
    SIMILARITY_RANK = "similarity"
    LOSS_IMPACT = "loss-impact"
    RANDOM = "random"


class GatePlacement(Enum):
    """Where a layer's gate is applied."""

    STREAM = "stream"  # gate scales the whole post-residual output
    DELTA = "delta"  # gate scales only the layer's residual contribution


class GateCriterion(Enum):
    """Gate value compared when picking the least important layer."""

    MAGNITUDE = "magnitude"
    RAW = "raw"


class TokenizerMode(Enum):
    """Tokenizer granularity."""

    BYTE = "byte"
    CHAR = "char"
