"""
Tests for end-to-end pruning runs and the multi-run experiments.
"""

from dataclasses import replace

import pytest

from trsp_prune.core.enums import SelectionMode, StrategyKind
from trsp_prune.core.errors import ConfigError
from trsp_prune.core.run_context import create_run_context
from trsp_prune.core.runlog import RunLog
from trsp_prune.evaluation.experiments import compare_strategies, lambda_grid, ratio_sweep
from trsp_prune.evaluation.report import EvalConfig
from trsp_prune.model.transformer import mask_layer
from trsp_prune.pruning.pipeline import (
    PruneConfig,
    calibration_for,
    layers_to_prune,
    run_baseline,
    run_strategy,
    run_trsp,
)
from trsp_prune.pruning.trsp import SelectionError, Stage1Config, Stage2Config

STAGE1 = Stage1Config(lambda1=0.01, steps=3, lr=1e-3, gate_lr=1e-2, batch_size=4)
STAGE2 = Stage2Config(lambda2=0.01, steps=3, lr=1e-3, batch_size=4)
PRUNE = PruneConfig(ratio=0.5, n_calibration=4, calib_seq_len=16)
EVAL = EvalConfig(seq_len=16, batch_size=64)


def trsp(state, corpus, **kwargs):
    options = dict(
        ratio=0.5,
        stage1=STAGE1,
        stage2=STAGE2,
        context=create_run_context(7),
        prune_config=PRUNE,
        eval_config=EVAL,
    )
    options.update(kwargs)
    return run_trsp(state, corpus, **options)


def test_layers_to_prune_rounding():
    """Test rounding of the pruning ratio and its degenerate cases."""
    assert layers_to_prune(0.25, 8) == 2
    assert layers_to_prune(0.5, 4) == 2
    assert layers_to_prune(0.125, 4) == 1  # 0.5 rounds up
    with pytest.raises(SelectionError):
        layers_to_prune(0.1, 4)
    with pytest.raises(SelectionError):
        layers_to_prune(0.9, 4)
    with pytest.raises(SelectionError):
        layers_to_prune(1.0, 4)
    with pytest.raises(ConfigError):
        PruneConfig(ratio=0.0)


def test_run_trsp_report(tiny_state, corpus):
    """Test the pruned model and the report of a regularized iterative run."""
    log = RunLog()
    outcome = trsp(tiny_state, corpus, run_log=log)
    report = outcome.report

    assert len(outcome.prune_set) == 2
    assert outcome.state.n_layers == 2
    assert outcome.state.layer_ids == [i for i in range(4) if i not in outcome.prune_set]
    assert report.n_layers_before == 4
    assert report.n_layers_after == 2
    assert report.regularize is True
    assert len(report.stage2_penalties) == 3
    assert sorted(report.similarity_before) == [0, 1, 2, 3]
    assert sorted(report.similarity_after) == [0, 1, 2, 3]
    assert len(report.history) == 2
    assert report.ppl >= 1.0
    assert report.ppl_delta == report.ppl - report.ppl_before
    assert set(report.timings) == {"stage1", "stage2", "total"}
    assert report.calibration["n_sequences"] == 4
    # The input model is left untouched
    assert tiny_state.n_layers == 4
    assert tiny_state.mask_set == set()
    assert [e.stage for e in log.get_events(event_type="stage_end")] == ["stage1", "stage2"]


def test_run_trsp_is_deterministic(tiny_state, corpus):
    """Test that identical seeds give identical prune sets and perplexities."""
    a = trsp(tiny_state, corpus, mode=SelectionMode.ONE_SHOT)
    b = trsp(tiny_state, corpus, mode=SelectionMode.ONE_SHOT)
    assert a.prune_set.indices == b.prune_set.indices
    assert a.report.ppl == b.report.ppl
    assert a.report.mode == "one_shot"


def test_stage2_switches(tiny_state, corpus):
    """Test the ablation without regularization and the lambda2 = 0 shortcut."""
    off = trsp(tiny_state, corpus, regularize=False)
    zero = trsp(tiny_state, corpus, stage2=replace(STAGE2, lambda2=0.0))
    for outcome in (off, zero):
        assert outcome.report.stage2_penalties == []
        assert outcome.report.similarity_after == {}
        assert "stage2" not in outcome.report.timings
    assert off.report.ppl == zero.report.ppl


def test_run_trsp_rejects_degenerate_ratio(tiny_state, corpus):
    """Test that a ratio rounding to zero layers is an error."""
    with pytest.raises(SelectionError):
        trsp(tiny_state, corpus, ratio=0.1)


@pytest.mark.parametrize("kind", ["similarity", "loss-impact", "random"])
def test_run_baseline(tiny_state, corpus, kind):
    """Test that every baseline prunes the requested number of layers."""
    outcome = run_baseline(
        tiny_state,
        corpus,
        0.5,
        kind,
        context=create_run_context(1),
        prune_config=PRUNE,
        eval_config=EVAL,
    )
    assert outcome.report.strategy == kind
    assert len(outcome.prune_set) == 2
    assert outcome.state.n_layers == 2
    assert outcome.report.similarity_after == {}


def test_run_strategy_routes(tiny_state, corpus):
    """Test routing by strategy kind."""
    config = replace(PRUNE, strategy=StrategyKind.RANDOM)
    outcome = run_strategy(tiny_state, corpus, config, eval_config=EVAL)
    assert outcome.report.strategy == "random"
    assert outcome.history is None


def test_single_cell_grid_matches_single_run(tiny_state, corpus):
    """Test that a 1x1 grid reproduces run_trsp with the same seed."""
    grid = lambda_grid(
        tiny_state,
        corpus,
        [0.01],
        [0.01],
        0.5,
        STAGE1,
        STAGE2,
        context=create_run_context(7),
        prune_config=PRUNE,
        eval_config=EVAL,
    )
    single = trsp(tiny_state, corpus)
    assert grid.ppl == [[single.report.ppl]]
    assert grid.best() == {"lambda1": 0.01, "lambda2": 0.01, "ppl": single.report.ppl}


def test_grid_zero_cell_matches_unregularized_run(tiny_state, corpus):
    """Test that the (0, 0) cell equals a zero-lambda1 run without stage 2."""
    grid = lambda_grid(
        tiny_state,
        corpus,
        [0.0, 0.01],
        [0.0],
        0.5,
        STAGE1,
        STAGE2,
        context=create_run_context(7),
        prune_config=PRUNE,
        eval_config=EVAL,
    )
    reference = trsp(tiny_state, corpus, stage1=replace(STAGE1, lambda1=0.0), regularize=False)
    assert len(grid.ppl) == 2
    assert grid.ppl[0][0] == reference.report.ppl
    assert grid.reports[0].prune_set == reference.report.prune_set

    with pytest.raises(ConfigError):
        lambda_grid(tiny_state, corpus, [], [0.0], 0.5)


def test_compare_shares_data_and_ranks(tiny_state, corpus):
    """Test one ranked row per strategy, all on the same evaluation split."""
    rows = compare_strategies(
        tiny_state,
        corpus,
        0.5,
        stage1=STAGE1,
        stage2=STAGE2,
        context=create_run_context(3),
        prune_config=PRUNE,
        eval_config=EVAL,
    )
    assert sorted(r["strategy"] for r in rows) == sorted(k.value for k in StrategyKind)
    assert [r["rank"] for r in rows] == [1, 2, 3, 4]
    assert [r["ppl"] for r in rows] == sorted(r["ppl"] for r in rows)
    assert len({r["eval_split_hash"] for r in rows}) == 1
    assert all(r["tokens_per_second"] is None for r in rows)


def test_ratio_sweep_rows(tiny_state, corpus):
    """Test one row per (ratio, strategy) pair."""
    rows = ratio_sweep(
        tiny_state,
        corpus,
        [0.25, 0.5],
        [StrategyKind.RANDOM, StrategyKind.SIMILARITY_RANK],
        context=create_run_context(0),
        prune_config=PRUNE,
        eval_config=EVAL,
    )
    assert [(r["ratio"], r["strategy"]) for r in rows] == [
        (0.25, "random"),
        (0.25, "similarity"),
        (0.5, "random"),
        (0.5, "similarity"),
    ]
    assert [r["n_pruned"] for r in rows] == [1, 1, 2, 2]


def test_calibration_comes_from_the_run_seed(tiny_state, corpus):
    """Test that the calibration set depends only on the root seed."""
    a = calibration_for(tiny_state, corpus, PRUNE, create_run_context(5))
    b = calibration_for(tiny_state, corpus, PRUNE, create_run_context(5, "other"))
    c = calibration_for(tiny_state, corpus, PRUNE, create_run_context(6))
    assert a.offsets == b.offsets
    assert a.offsets != c.offsets


def test_run_trsp_keeps_masks_from_before_the_run(tiny_state, corpus):
    """Test that a layer masked before pruning stays masked and is never selected."""
    mask_layer(tiny_state, 3)
    outcome = trsp(tiny_state, corpus, mode=SelectionMode.ONE_SHOT)

    assert 3 not in outcome.prune_set.indices
    assert 3 in outcome.state.layer_ids
    assert outcome.state.mask_set == {3}
    assert 3 not in outcome.report.similarity_before
    assert tiny_state.mask_set == {3}
