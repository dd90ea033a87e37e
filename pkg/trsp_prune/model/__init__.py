"""
Gated, maskable decoder-only transformer with checkpointing and pretraining.
"""

from .checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from .config import ModelConfig
from .training import PretrainConfig, PretrainResult, mean_loss, pretrain
from .transformer import (
    ForwardOutput,
    LayerIndexError,
    LayerIOTrace,
    ModelState,
    clear_mask,
    forward,
    generate,
    mask_layer,
    prune,
    unmask_layer,
)

__all__ = [
    "Checkpoint",
    "CheckpointFormatError",
    "ForwardOutput",
    "LayerIOTrace",
    "LayerIndexError",
    "ModelConfig",
    "ModelState",
    "PretrainConfig",
    "PretrainResult",
    "clear_mask",
    "forward",
    "generate",
    "load_checkpoint",
    "mask_layer",
    "mean_loss",
    "pretrain",
    "prune",
    "read_checkpoint",
    "save_checkpoint",
    "unmask_layer",
]
