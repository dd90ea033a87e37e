"""
Multi-run experiments: the lambda grid, the pruning-ratio sweep and the strategy comparison.

Every run inside one experiment shares the calibration set drawn from the run context, so the
arms differ only in the setting being varied.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

from tqdm import tqdm

from ..core.enums import SelectionMode, StrategyKind
from ..core.errors import ConfigError
from ..core.run_context import RunContext, create_run_context
from ..core.runlog import RunLog
from ..data.corpus import CalibrationSet, Corpus
from ..model.transformer import ModelState
from ..pruning.pipeline import PruneConfig, calibration_for, run_strategy
from ..pruning.trsp import Stage1Config, Stage2Config, max_consecutive_run
from .benchmark import BenchConfig, benchmark
from .report import EvalConfig, EvalReport

logger = logging.getLogger(__name__)


@dataclass
class GridResult:
    """
    Perplexity per (lambda1, lambda2) cell.

    Attributes:
        lambda1s: Row values
        lambda2s: Column values
        ppl: Matrix indexed ``[row][column]``
        reports: Report of every cell in row-major order
    """

    lambda1s: List[float]
    lambda2s: List[float]
    ppl: List[List[float]]
    reports: List[EvalReport] = field(default_factory=list)

    def best(self) -> Dict[str, float]:
        value, i, j = min(
            (v, i, j) for i, row in enumerate(self.ppl) for j, v in enumerate(row)
        )
        return {"lambda1": self.lambda1s[i], "lambda2": self.lambda2s[j], "ppl": value}


def _shared_calibration(
    state: ModelState,
    corpus: Corpus,
    calib: Optional[CalibrationSet],
    prune_config: PruneConfig,
    context: RunContext,
) -> CalibrationSet:
    return calib or calibration_for(state, corpus, prune_config, context)


def lambda_grid(
    state: ModelState,
    corpus: Corpus,
    lambda1s: Sequence[float],
    lambda2s: Sequence[float],
    ratio: float,
    stage1: Optional[Stage1Config] = None,
    stage2: Optional[Stage2Config] = None,
    mode: SelectionMode = SelectionMode.ITERATIVE,
    calib: Optional[CalibrationSet] = None,
    context: Optional[RunContext] = None,
    prune_config: Optional[PruneConfig] = None,
    eval_config: Optional[EvalConfig] = None,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> GridResult:
    """
    One full TRSP run per (lambda1, lambda2) pair with a shared seed and calibration set.

    A cell with ``lambda2 == 0`` skips stage 2.

    Raises:
        ConfigError: If either list is empty
    """
    if not lambda1s or not lambda2s:
        raise ConfigError("lambda grid needs at least one lambda1 and one lambda2")
    stage1 = stage1 or Stage1Config()
    stage2 = stage2 or Stage2Config()
    context = context or create_run_context(0, "grid")
    prune_config = prune_config or PruneConfig(ratio=ratio, mode=mode)
    calib = _shared_calibration(state, corpus, calib, prune_config, context)

    result = GridResult([float(x) for x in lambda1s], [float(x) for x in lambda2s], [])
    cells = [(l1, l2) for l1 in result.lambda1s for l2 in result.lambda2s]
    bar = tqdm(cells, desc="grid", disable=not progress)
    for l1, l2 in bar:
        config = replace(prune_config, ratio=ratio, mode=mode, strategy=StrategyKind.TRSP)
        outcome = run_strategy(
            state,
            corpus,
            config,
            replace(stage1, lambda1=l1),
            replace(stage2, lambda2=l2),
            calib=calib,
            context=context,
            eval_config=eval_config,
            run_log=run_log,
        )
        result.reports.append(outcome.report)
        logger.info("lambda1=%g lambda2=%g: ppl %.4f", l1, l2, outcome.report.ppl)
    columns = len(result.lambda2s)
    result.ppl = [
        [r.ppl for r in result.reports[i * columns : (i + 1) * columns]]
        for i in range(len(result.lambda1s))
    ]
    return result


def ratio_sweep(
    state: ModelState,
    corpus: Corpus,
    ratios: Sequence[float],
    strategies: Sequence[StrategyKind] = (StrategyKind.TRSP,),
    stage1: Optional[Stage1Config] = None,
    stage2: Optional[Stage2Config] = None,
    calib: Optional[CalibrationSet] = None,
    context: Optional[RunContext] = None,
    prune_config: Optional[PruneConfig] = None,
    eval_config: Optional[EvalConfig] = None,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> List[dict]:
    """Perplexity of every strategy at every pruning ratio, one row per (ratio, strategy)."""
    if not ratios or not strategies:
        raise ConfigError("ratio sweep needs at least one ratio and one strategy")
    context = context or create_run_context(0, "sweep")
    prune_config = prune_config or PruneConfig()
    calib = _shared_calibration(state, corpus, calib, prune_config, context)

    rows = []
    cells = [(float(r), StrategyKind(s)) for r in ratios for s in strategies]
    for ratio, kind in tqdm(cells, desc="sweep", disable=not progress):
        outcome = run_strategy(
            state,
            corpus,
            replace(prune_config, ratio=ratio, strategy=kind),
            stage1,
            stage2,
            calib=calib,
            context=context,
            eval_config=eval_config,
            run_log=run_log,
        )
        rows.append(
            {
                "ratio": ratio,
                "strategy": kind.value,
                "n_pruned": len(outcome.prune_set),
                "ppl": outcome.report.ppl,
                "prune_set": " ".join(str(i) for i in outcome.prune_set),
            }
        )
    return rows


def compare_strategies(
    state: ModelState,
    corpus: Corpus,
    ratio: float,
    strategies: Sequence[StrategyKind] = tuple(StrategyKind),
    stage1: Optional[Stage1Config] = None,
    stage2: Optional[Stage2Config] = None,
    calib: Optional[CalibrationSet] = None,
    context: Optional[RunContext] = None,
    prune_config: Optional[PruneConfig] = None,
    eval_config: Optional[EvalConfig] = None,
    bench_config: Optional[BenchConfig] = None,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> List[dict]:
    """
    Run every strategy on identical seeds and data; rows ranked by perplexity.

    Throughput is measured only when ``bench_config`` is given.
    """
    if not strategies:
        raise ConfigError("compare needs at least one strategy")
    context = context or create_run_context(0, "compare")
    prune_config = prune_config or PruneConfig(ratio=ratio)
    calib = _shared_calibration(state, corpus, calib, prune_config, context)

    rows = []
    for kind in tqdm([StrategyKind(s) for s in strategies], desc="compare", disable=not progress):
        outcome = run_strategy(
            state,
            corpus,
            replace(prune_config, ratio=ratio, strategy=kind),
            stage1,
            stage2,
            calib=calib,
            context=context,
            eval_config=eval_config,
            run_log=run_log,
        )
        row = {
            "strategy": kind.value,
            "ppl": outcome.report.ppl,
            "ppl_delta": outcome.report.ppl_delta,
            "tokens_per_second": None,
            "latency_ms": None,
            "prune_set": " ".join(str(i) for i in outcome.prune_set),
            "max_consecutive": max_consecutive_run(outcome.prune_set.indices),
            "eval_split_hash": outcome.report.eval_split_hash,
        }
        if bench_config is not None:
            bench = benchmark(
                outcome.state,
                bench_config.batch,
                bench_config.gen_len,
                bench_config.prompt_len,
                bench_config.repeats,
                bench_config.warmup,
                bench_config.seed,
            )
            row["tokens_per_second"] = bench.tokens_per_second
            row["latency_ms"] = bench.latency_ms
        rows.append(row)

    rows.sort(key=lambda r: (r["ppl"], r["strategy"]))
    for rank, row in enumerate(rows, start=1):
        row["rank"] = rank
    return rows


COMPARE_COLUMNS = [
    "rank",
    "strategy",
    "ppl",
    "ppl_delta",
    "tokens_per_second",
    "latency_ms",
    "prune_set",
    "max_consecutive",
    "eval_split_hash",
]
SWEEP_COLUMNS = ["ratio", "strategy", "n_pruned", "ppl", "prune_set"]
