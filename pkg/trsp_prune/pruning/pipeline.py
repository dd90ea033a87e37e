"""
End-to-end pruning runs: calibration, selection, optional regularization, removal, evaluation.
"""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Optional, Set, Union

from ..core.enums import SelectionMode, StrategyKind
from ..core.errors import ConfigError, InvariantViolation
from ..core.run_context import RunContext, create_run_context
from ..core.runlog import RunLog
from ..data.corpus import CalibrationSet, Corpus, fingerprint, sample_calibration
from ..evaluation.metrics import cosine_similarity_trace, perplexity
from ..evaluation.report import EvalConfig, EvalReport, compression_summary
from ..model.transformer import ModelState, prune
from .baselines import get_strategy
from .trsp import (
    PruneSet,
    SelectionError,
    SelectionHistory,
    Stage1Config,
    Stage2Config,
    iterative_selection,
    one_shot_selection,
    stage2_regularize,
)

logger = logging.getLogger(__name__)


@dataclass
class PruneConfig:
    """
    Attributes:
        ratio: Share of layers to remove
        strategy: TRSP or one of the baselines
        mode: Iterative or one-shot gate learning (TRSP only)
        regularize: Run stage 2 before removal (TRSP only)
        n_calibration: Calibration sequences
        calib_seq_len: Tokens per calibration sequence (capped at the model context)
    """

    ratio: float = 0.25
    strategy: StrategyKind = StrategyKind.TRSP
    mode: SelectionMode = SelectionMode.ITERATIVE
    regularize: bool = True
    n_calibration: int = 32
    calib_seq_len: int = 128

    def __post_init__(self):
        if isinstance(self.strategy, str):
            self.strategy = StrategyKind(self.strategy)
        if isinstance(self.mode, str):
            self.mode = SelectionMode(self.mode)
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"prune.ratio must lie in (0, 1), got {self.ratio}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["strategy"] = self.strategy.value
        data["mode"] = self.mode.value
        return data


@dataclass
class PruneOutcome:
    """Pruned model, its report and the inputs needed to replay the run."""

    state: ModelState
    report: EvalReport
    prune_set: PruneSet
    calibration: CalibrationSet
    history: Optional[SelectionHistory] = None


def layers_to_prune(ratio: float, n_layers: int) -> int:
    """
    ``round(ratio * n_layers)`` with halves rounded up.

    Raises:
        SelectionError: If the ratio is outside (0, 1) or rounds to 0 or to every layer
    """
    if not 0.0 < ratio < 1.0:
        raise SelectionError(f"Pruning ratio must lie in (0, 1), got {ratio}")
    n = int(ratio * n_layers + 0.5)
    if not 1 <= n < n_layers:
        raise SelectionError(
            f"Ratio {ratio} of {n_layers} layers rounds to {n}; need between 1 and {n_layers - 1}"
        )
    return n


def calibration_for(
    state: ModelState,
    corpus: Corpus,
    config: PruneConfig,
    context: RunContext,
) -> CalibrationSet:
    seq_len = min(config.calib_seq_len, state.config.max_seq_len)
    return sample_calibration(
        corpus, config.n_calibration, seq_len, context.seed_for("calibration")
    )


def _check_outcome(
    prune_set: PruneSet, n: int, masked_at_start: Set[int], before: ModelState, after: ModelState
) -> None:
    if len(prune_set) != n:
        raise InvariantViolation(f"Prune set has {len(prune_set)} layers, expected {n}")
    overlap = masked_at_start & set(prune_set)
    if overlap:
        raise InvariantViolation(f"Layers {sorted(overlap)} were masked before selection")
    if after.n_layers != before.n_layers - n:
        raise InvariantViolation(
            f"Pruned model has {after.n_layers} layers, expected {before.n_layers - n}"
        )
    survivors = [i for i in before.layer_ids if i not in set(prune_set)]
    if after.layer_ids != survivors:
        raise InvariantViolation(f"Surviving layers {after.layer_ids} != {survivors}")


def _eval_ppl(state: ModelState, corpus: Corpus, eval_config: EvalConfig) -> float:
    return perplexity(
        state,
        corpus.test,
        seq_len=eval_config.seq_len or None,
        stride=eval_config.stride or None,
        batch_size=eval_config.batch_size,
    )


def run_trsp(
    state: ModelState,
    corpus: Corpus,
    ratio: float,
    stage1: Optional[Stage1Config] = None,
    stage2: Optional[Stage2Config] = None,
    mode: Union[SelectionMode, str] = SelectionMode.ITERATIVE,
    regularize: bool = True,
    calib: Optional[CalibrationSet] = None,
    context: Optional[RunContext] = None,
    prune_config: Optional[PruneConfig] = None,
    eval_config: Optional[EvalConfig] = None,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> PruneOutcome:
    """
    Prune ``round(ratio * l)`` layers of ``state`` with the two-stage procedure.

    ``state`` itself is left untouched; selection and regularization run on a copy.

    Args:
        state: Dense (or already pruned) model
        corpus: Corpus providing the calibration (train) and evaluation (test) splits
        ratio: Share of layers to remove
        stage1: Gate learning settings
        stage2: Difference regularization settings
        mode: Iterative or one-shot selection
        regularize: Run stage 2; False reproduces the ablation without knowledge transfer
        calib: Calibration set (sampled from ``corpus`` with the run seed when omitted)
        context: Seeds of the run
        prune_config: Calibration size settings
        eval_config: Perplexity and similarity settings
        run_log: Event sink
        progress: Show progress bars

    Returns:
        PruneOutcome with the pruned model and its report

    Raises:
        SelectionError: If the ratio rounds to no layer or to every layer
    """
    stage1 = stage1 or Stage1Config()
    stage2 = stage2 or Stage2Config()
    mode = SelectionMode(mode)
    context = context or create_run_context(0, "prune")
    prune_config = prune_config or PruneConfig(ratio=ratio, mode=mode, regularize=regularize)
    eval_config = eval_config or EvalConfig()
    run_log = run_log or RunLog()
    n = layers_to_prune(ratio, state.n_layers)

    timings = {}
    started = time.perf_counter()
    calib = calib or calibration_for(state, corpus, prune_config, context)
    ppl_before = _eval_ppl(state, corpus, eval_config)

    work = state.copy()
    masked_at_start = set(work.mask_set)
    run_log.record("stage_start", "stage1", mode=mode.value, n=n, lambda1=stage1.lambda1)
    tick = time.perf_counter()
    select = iterative_selection if mode is SelectionMode.ITERATIVE else one_shot_selection
    prune_set, history = select(work, calib, n, stage1, run_log, progress)
    timings["stage1"] = time.perf_counter() - tick
    run_log.record("stage_end", "stage1", prune_set=prune_set.indices)

    # only the selection masks are lifted
    work.mask_set.intersection_update(masked_at_start)
    sim_before, sim_after, zero_norm = {}, {}, 0
    if eval_config.similarity:
        trace = cosine_similarity_trace(work, calib)
        sim_before, zero_norm = trace.values, sum(trace.zero_norm.values())

    penalties = []
    if regularize and stage2.lambda2 > 0:
        tick = time.perf_counter()
        result = stage2_regularize(work, prune_set, calib, stage2, run_log, progress)
        timings["stage2"] = time.perf_counter() - tick
        penalties = result.penalties
        if eval_config.similarity:
            trace = cosine_similarity_trace(work, calib)
            sim_after = trace.values
            zero_norm += sum(trace.zero_norm.values())
    elif regularize:
        logger.info("lambda2 is 0; stage 2 skipped")

    pruned = prune(work, prune_set)
    _check_outcome(prune_set, n, masked_at_start, state, pruned)
    ppl_after = _eval_ppl(pruned, corpus, eval_config)
    timings["total"] = time.perf_counter() - started

    report = EvalReport(
        strategy=StrategyKind.TRSP.value,
        ppl=ppl_after,
        ppl_before=ppl_before,
        mode=mode.value,
        regularize=regularize,
        ratio=ratio,
        n_layers_before=state.n_layers,
        n_layers_after=pruned.n_layers,
        prune_set=prune_set.to_dict(),
        history=history.to_list(),
        similarity_before=sim_before,
        similarity_after=sim_after,
        zero_norm_vectors=zero_norm,
        stage2_penalties=penalties,
        compression=compression_summary(state, pruned),
        timings=timings,
        eval_split_hash=fingerprint(corpus.test),
        calibration=calib.to_dict(),
    ).validate()
    logger.info("TRSP pruned %s: ppl %.3f -> %.3f", prune_set.indices, ppl_before, ppl_after)
    return PruneOutcome(pruned, report, prune_set, calib, history)


def run_baseline(
    state: ModelState,
    corpus: Corpus,
    ratio: float,
    kind: Union[StrategyKind, str],
    calib: Optional[CalibrationSet] = None,
    context: Optional[RunContext] = None,
    prune_config: Optional[PruneConfig] = None,
    eval_config: Optional[EvalConfig] = None,
    run_log: Optional[RunLog] = None,
) -> PruneOutcome:
    """Select with a baseline strategy, remove the layers and evaluate."""
    kind = StrategyKind(kind)
    context = context or create_run_context(0, "prune")
    prune_config = prune_config or PruneConfig(ratio=ratio, strategy=kind)
    eval_config = eval_config or EvalConfig()
    run_log = run_log or RunLog()
    n = layers_to_prune(ratio, state.n_layers)

    started = time.perf_counter()
    calib = calib or calibration_for(state, corpus, prune_config, context)
    ppl_before = _eval_ppl(state, corpus, eval_config)
    strategy = get_strategy(kind, seed=context.seed_for(f"baseline:{kind.value}"))
    run_log.record("stage_start", kind.value, n=n)
    tick = time.perf_counter()
    prune_set = strategy.select(state, calib, n)
    selection_time = time.perf_counter() - tick
    run_log.record("selection", kind.value, layers=prune_set.indices)

    sim_before, zero_norm = {}, 0
    if eval_config.similarity:
        trace = cosine_similarity_trace(state, calib)
        sim_before, zero_norm = trace.values, sum(trace.zero_norm.values())

    pruned = prune(state, prune_set)
    _check_outcome(prune_set, n, set(state.mask_set), state, pruned)
    ppl_after = _eval_ppl(pruned, corpus, eval_config)
    run_log.record("stage_end", kind.value, ppl=ppl_after)

    report = EvalReport(
        strategy=kind.value,
        ppl=ppl_after,
        ppl_before=ppl_before,
        ratio=ratio,
        n_layers_before=state.n_layers,
        n_layers_after=pruned.n_layers,
        prune_set=prune_set.to_dict(),
        similarity_before=sim_before,
        zero_norm_vectors=zero_norm,
        compression=compression_summary(state, pruned),
        timings={"selection": selection_time, "total": time.perf_counter() - started},
        eval_split_hash=fingerprint(corpus.test),
        calibration=calib.to_dict(),
    ).validate()
    logger.info("%s pruned %s: ppl %.3f", kind.value, prune_set.indices, ppl_after)
    return PruneOutcome(pruned, report, prune_set, calib)


def run_strategy(
    state: ModelState,
    corpus: Corpus,
    config: PruneConfig,
    stage1: Optional[Stage1Config] = None,
    stage2: Optional[Stage2Config] = None,
    calib: Optional[CalibrationSet] = None,
    context: Optional[RunContext] = None,
    eval_config: Optional[EvalConfig] = None,
    run_log: Optional[RunLog] = None,
    progress: bool = False,
) -> PruneOutcome:
    """Route ``config.strategy`` to TRSP or to the matching baseline."""
    if config.strategy is StrategyKind.TRSP:
        return run_trsp(
            state,
            corpus,
            config.ratio,
            stage1,
            stage2,
            config.mode,
            config.regularize,
            calib=calib,
            context=context,
            prune_config=config,
            eval_config=eval_config,
            run_log=run_log,
            progress=progress,
        )
    return run_baseline(
        state,
        corpus,
        config.ratio,
        config.strategy,
        calib=calib,
        context=context,
        prune_config=config,
        eval_config=eval_config,
        run_log=run_log,
    )
