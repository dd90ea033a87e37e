"""
Core numerics of the TRSP toolkit: tensors, reverse-mode differentiation, optimisation.
"""

from . import ops
from .early_stopping import EarlyStopConfig, EarlyStopping
from .enums import (
    GateCriterion,
    GatePlacement,
    NormType,
    SelectionMode,
    StrategyKind,
    TokenizerMode,
)
from .errors import (
    ConfigError,
    DataError,
    InvariantViolation,
    NumericalError,
    ShapeError,
    TapeError,
    TrspError,
)
from .gradcheck import GradCheckResult, gradient_check
from .optim import Adam, adam_step
from .run_context import RunContext, create_run_context, derive_seed
from .runlog import RunEvent, RunLog
from .tensor import Parameter, Tape, Tensor, backward, count_macs

__all__ = [
    "Adam",
    "ConfigError",
    "DataError",
    "EarlyStopConfig",
    "EarlyStopping",
    "GateCriterion",
    "GatePlacement",
    "GradCheckResult",
    "InvariantViolation",
    "NormType",
    "NumericalError",
    "Parameter",
    "RunContext",
    "RunEvent",
    "RunLog",
    "SelectionMode",
    "ShapeError",
    "StrategyKind",
    "Tape",
    "TapeError",
    "Tensor",
    "TokenizerMode",
    "TrspError",
    "adam_step",
    "backward",
    "count_macs",
    "create_run_context",
    "derive_seed",
    "gradient_check",
    "ops",
]
