"""
TRSP pruning toolkit

Two-stage regularization-based structured layer pruning for a gated decoder-only
transformer, with baselines, evaluation and diagnostics.
"""

from .config import DataConfig, RunConfig, load_config
from .core import (
    ConfigError,
    DataError,
    InvariantViolation,
    NumericalError,
    Parameter,
    RunLog,
    Tape,
    Tensor,
    TrspError,
    create_run_context,
)
from .data import CalibrationSet, Corpus, Tokenizer, load_corpus, sample_calibration
from .evaluation import (
    BenchmarkResult,
    EvalReport,
    benchmark,
    cosine_similarity_trace,
    perplexity,
)
from .evaluation.experiments import compare_strategies, lambda_grid, ratio_sweep
from .model import (
    ModelConfig,
    ModelState,
    forward,
    load_checkpoint,
    mask_layer,
    pretrain,
    prune,
    save_checkpoint,
)
from .pruning import (
    PruneSet,
    SelectionError,
    Stage1Config,
    Stage2Config,
    iterative_selection,
    one_shot_selection,
    run_baseline,
    run_trsp,
    stage2_regularize,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult",
    "CalibrationSet",
    "ConfigError",
    "Corpus",
    "DataConfig",
    "DataError",
    "EvalReport",
    "InvariantViolation",
    "ModelConfig",
    "ModelState",
    "NumericalError",
    "Parameter",
    "PruneSet",
    "RunConfig",
    "RunLog",
    "SelectionError",
    "Stage1Config",
    "Stage2Config",
    "Tape",
    "Tensor",
    "Tokenizer",
    "TrspError",
    "benchmark",
    "compare_strategies",
    "cosine_similarity_trace",
    "create_run_context",
    "forward",
    "iterative_selection",
    "lambda_grid",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "mask_layer",
    "one_shot_selection",
    "perplexity",
    "pretrain",
    "prune",
    "ratio_sweep",
    "run_baseline",
    "run_trsp",
    "sample_calibration",
    "save_checkpoint",
    "stage2_regularize",
]
