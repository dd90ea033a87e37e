"""
Perplexity, similarity diagnostics, benchmarking and reports.

The multi-run drivers live in ``trsp_prune.evaluation.experiments``; they build on the pruning
pipeline and are imported from there.
"""

from .benchmark import BenchConfig, BenchmarkResult, benchmark
from .metrics import (
    SimilarityTrace,
    cosine_similarity,
    cosine_similarity_trace,
    per_vector_cosine,
    perplexity,
)
from .report import (
    EvalConfig,
    EvalReport,
    compression_summary,
    read_grid_csv,
    read_json,
    write_curve_csv,
    write_grid_csv,
    write_json,
    write_rows,
    write_similarity_csv,
)

__all__ = [
    "BenchConfig",
    "BenchmarkResult",
    "EvalConfig",
    "EvalReport",
    "SimilarityTrace",
    "benchmark",
    "compression_summary",
    "cosine_similarity",
    "cosine_similarity_trace",
    "per_vector_cosine",
    "perplexity",
    "read_grid_csv",
    "read_json",
    "write_curve_csv",
    "write_grid_csv",
    "write_json",
    "write_rows",
    "write_similarity_csv",
]
