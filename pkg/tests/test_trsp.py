"""
Tests for gate learning, layer selection and the difference regularization.
"""

from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from trsp_prune.core import ops
from trsp_prune.core.enums import GateCriterion, NormType
from trsp_prune.core.errors import ConfigError
from trsp_prune.core.gradcheck import gradient_check
from trsp_prune.core.optim import Adam
from trsp_prune.core.runlog import RunLog
from trsp_prune.core.tensor import Tape, Tensor
from trsp_prune.data.corpus import sample_calibration
from trsp_prune.model.training import mean_loss
from trsp_prune.model.transformer import mask_layer, prune
from trsp_prune.pruning.trsp import (
    PruneSet,
    SelectionError,
    Stage1Config,
    Stage2Config,
    check_prune_count,
    difference_penalty,
    iterative_selection,
    learn_layer_weights,
    max_consecutive_run,
    one_shot_selection,
    select_min_gate,
    stage1_loss,
    stage2_regularize,
)

from .helpers import random_state

QUICK = Stage1Config(lambda1=0.05, steps=6, lr=1e-3, gate_lr=5e-2, eval_interval=100)


def calibration(state, n=8, seq_len=8, seed=0):
    rng = np.random.default_rng(seed)
    stream = rng.integers(0, state.config.vocab_size, size=400)
    return sample_calibration(stream, n=n, seq_len=seq_len, seed=seed)


def test_select_min_gate_examples():
    """Test the smallest-gate rule, its tie rule and the mask."""
    assert select_min_gate([1.0, 0.2, 0.9]) == 1
    assert select_min_gate([0.2, 0.2, 0.9]) == 0
    assert select_min_gate([0.2, 0.1, 0.9], mask_set={1}) == 0
    assert select_min_gate({3: 0.5, 7: 0.4}) == 7


def test_select_min_gate_criterion():
    """Test magnitude against raw gate comparison."""
    gates = [-0.5, 0.2, 0.9]
    assert select_min_gate(gates) == 1
    assert select_min_gate(gates, criterion=GateCriterion.RAW) == 0
    with pytest.raises(SelectionError):
        select_min_gate([0.1, 0.2], mask_set={0, 1})


def test_l1_penalty_equals_constrained_optimum():
    """Test that sum |v| is the optimum of min 1'y subject to -y <= v <= y."""
    rng = np.random.default_rng(0)

    def feasible(v, y):
        return bool(np.all(-y <= v) and np.all(v <= y))

    for _ in range(100):
        v = rng.normal(size=int(rng.integers(1, 10)))
        y = np.abs(v)
        assert feasible(v, y)
        assert ops.l1_sum(Tensor(v)).item() == y.sum()

        i = int(rng.integers(0, v.size))
        smaller = y.copy()
        smaller[i] = np.nextafter(y[i], -np.inf)
        assert not feasible(v, smaller)


def test_stage1_loss_without_penalty():
    """Test that lambda1 = 0 leaves exactly the language-modeling loss."""
    state = random_state()
    batch = calibration(state).tokens[:2]
    total, lm, penalty = stage1_loss(state, batch, 0.0)
    assert total.item() == lm.item()
    assert penalty.item() == pytest.approx(4.0)

    # Masked layers are not penalised
    mask_layer(state, 2)
    _, _, penalty = stage1_loss(state, batch, 0.0)
    assert penalty.item() == pytest.approx(3.0)


def test_large_lambda_drives_single_gate_down():
    """Test that a strong L1 weight shrinks the only gate of a one-layer model."""
    state = random_state(n_layers=1)
    config = Stage1Config(lambda1=10.0, steps=20, gate_lr=1e-2, joint_weights=False)
    result = learn_layer_weights(state, calibration(state), config)
    assert result.gates[0] < 1.0
    assert result.penalties[-1] < result.penalties[0]


def test_learning_reduces_total_loss():
    """Test that the total loss decreases over a fixed-batch run."""
    state = random_state()
    config = replace(QUICK, steps=30, lr=1e-2, batch_size=8)
    result = learn_layer_weights(state, calibration(state, n=8), config)
    assert result.steps_run == 30
    assert result.losses[-1] < result.losses[0]


def test_masked_layer_state_is_untouched():
    """Test that the gate and weights of a masked layer do not move."""
    state = random_state()
    mask_layer(state, 1)
    state.gates.data[1] = 0.7
    before = [p.data.copy() for p in state.layer(1).parameters()]

    result = learn_layer_weights(state, calibration(state), QUICK)

    assert state.gate(1) == 0.7
    assert 1 not in result.gates
    for p, old in zip(state.layer(1).parameters(), before):
        assert np.array_equal(p.data, old)

    for i in (0, 2, 3):
        mask_layer(state, i)
    with pytest.raises(SelectionError):
        learn_layer_weights(state, calibration(state), QUICK)


def test_reinit_gates_flag():
    """Test that reinit_gates resets surviving gates before learning."""
    state = random_state()
    state.gates.data[:] = 0.3
    config = replace(QUICK, reinit_gates=True, gate_lr=0.0, joint_weights=False)
    learn_layer_weights(state, calibration(state), config)
    np.testing.assert_array_equal(state.gates.data, 1.0)


def test_scaled_penalty_gives_identical_gate_update():
    """Test linearity: scaling lambda1 by c and the penalty gradient by 1/c changes nothing."""
    base = random_state()
    batch = calibration(base).tokens[:4]
    lam, c = 0.05, 7.0

    def gate_grad(state, lambda1):
        state.zero_grad()
        with Tape() as tape:
            total, _, _ = stage1_loss(state, batch, lambda1)
        tape.backward(total)
        return state.gates.grad.copy()

    lm_grad = gate_grad(base, 0.0)
    plain = gate_grad(base, lam)
    scaled = gate_grad(base, c * lam)
    np.testing.assert_allclose(plain, lm_grad + (scaled - lm_grad) / c, rtol=0, atol=1e-12)

    a, b = base.copy(), base.copy()
    for state, grad in ((a, plain), (b, lm_grad + (scaled - lm_grad) / c)):
        optimizer = Adam([state.gates], lr=0.01)
        state.gates.grad[:] = grad
        optimizer.step()
    np.testing.assert_allclose(a.gates.data, b.gates.data, rtol=0, atol=1e-12)


def test_stage1_gradients_match_finite_differences():
    """Test the full stage-1 loss gradient on a 4-layer, d=32 model."""
    state = random_state(d_model=32)
    state.gates.data[:] = [0.9, 1.1, 0.8, 1.2]
    batch = calibration(state).tokens[:2]
    result = gradient_check(
        lambda: stage1_loss(state, batch, 0.1)[0], state.parameters(), n_samples=60
    )
    assert result.max_rel_error < 1e-4


@pytest.mark.parametrize("norm", [NormType.L1, NormType.L2])
def test_stage2_gradients_match_finite_differences(norm):
    """Test the full stage-2 loss gradient for both norms."""
    state = random_state(d_model=32)
    batch = calibration(state).tokens[:2]

    def loss_fn():
        lm, penalty = difference_penalty(state, batch, [1, 2], norm)
        return ops.add(lm, ops.scale(penalty, 0.5))

    result = gradient_check(loss_fn, state.parameters(), n_samples=60, seed=1)
    assert result.max_rel_error < 1e-4


def test_iterative_single_round_matches_one_pass():
    """Test that n = 1 selects what one learning pass and select_min_gate select."""
    state = random_state()
    calib = calibration(state)

    first = state.copy()
    prune_set, history = iterative_selection(first, calib, 1, QUICK)

    second = state.copy()
    second.reset_gates()
    learned = learn_layer_weights(second, calib, QUICK)
    assert prune_set.indices == [select_min_gate(learned.gates)]
    assert first.mask_set == set(prune_set.indices)
    assert len(history.records) == 1
    assert history.records[0].chosen == prune_set.indices[0]


def test_iterative_selection_is_deterministic():
    """Test identical prune sets and distinct indices across reruns."""
    state = random_state(n_layers=5)
    calib = calibration(state)
    log = RunLog()
    a, _ = iterative_selection(state.copy(), calib, 3, QUICK, run_log=log)
    b, _ = iterative_selection(state.copy(), calib, 3, QUICK)

    assert a.indices == b.indices
    assert len(set(a.indices)) == 3
    assert a.iterations == [0, 1, 2]
    assert a.strategy == "trsp-iterative"
    assert len(log.get_events(event_type="selection")) == 3


def test_prune_count_limits():
    """Test that the prune count must leave at least one layer."""
    check_prune_count(3, 4)
    with pytest.raises(SelectionError):
        check_prune_count(0, 4)
    with pytest.raises(SelectionError):
        check_prune_count(4, 4)

    state = random_state()
    with pytest.raises(SelectionError):
        iterative_selection(state, calibration(state), 4, QUICK)


def test_one_shot_complement_and_ties():
    """Test the one-shot prune set at n = l - 1 and with identical gates."""
    state = random_state()
    calib = calibration(state)
    prune_set, history = one_shot_selection(state.copy(), calib, 3, QUICK)
    gates = history.records[0].gates
    keep = max(gates, key=lambda i: (abs(gates[i]), i))
    assert sorted(prune_set.indices) == sorted(set(range(4)) - {keep})
    assert prune_set.strategy == "trsp-one-shot"

    frozen = replace(QUICK, gate_lr=0.0, joint_weights=False)
    prune_set, _ = one_shot_selection(state.copy(), calib, 2, frozen)
    assert prune_set.indices == [0, 1]


def test_greedy_selection_regret_against_exhaustive_search():
    """Test the greedy prune set against every 2-of-4 subset on the same weights."""
    state = random_state()
    calib = calibration(state)
    config = replace(QUICK, joint_weights=False)
    prune_set, _ = iterative_selection(state.copy(), calib, 2, config)

    losses = {
        subset: mean_loss(prune(state, subset), calib.tokens)
        for subset in combinations(range(4), 2)
    }
    greedy = mean_loss(prune(state, prune_set.indices), calib.tokens)
    regret = greedy - min(losses.values())
    assert tuple(sorted(prune_set.indices)) in losses
    assert regret >= 0.0


def test_max_consecutive_run():
    """Test the run-length statistic of prune sets."""
    assert max_consecutive_run([0, 1, 2, 5]) == 3
    assert max_consecutive_run([6, 2, 4]) == 1
    assert max_consecutive_run([]) == 0


def test_prune_set_and_config_validation():
    """Test rejected prune sets and stage settings."""
    with pytest.raises(SelectionError):
        PruneSet([1, 1])
    assert PruneSet([2, 0]).to_dict()["iterations"] == [0, 1]
    with pytest.raises(ConfigError):
        Stage1Config(lambda1=-1.0)
    with pytest.raises(ConfigError):
        Stage1Config(steps=0)
    with pytest.raises(ConfigError):
        Stage2Config(lambda2=-0.1)
    assert Stage2Config(norm="l1").norm is NormType.L1


def test_stage2_without_penalty_is_plain_fine_tuning():
    """Test that lambda2 = 0 leaves exactly the language-modeling loss."""
    state = random_state()
    config = Stage2Config(lambda2=0.0, steps=3, lr=1e-3, eval_interval=100)
    result = stage2_regularize(state, PruneSet([1]), calibration(state), config)
    assert result.losses == result.lm_losses
    assert result.steps_run == 3


def test_stage2_reduces_difference_penalty():
    """Test that the difference penalty of the selected layers goes down."""
    state = random_state()
    mask_layer(state, 1)
    state.gates.data[1] = 0.2
    log = RunLog()
    config = Stage2Config(lambda2=1.0, steps=40, lr=3e-3, eval_interval=100)

    result = stage2_regularize(state, PruneSet([1, 3]), calibration(state), config, run_log=log)

    assert result.final_penalty < result.initial_penalty
    assert state.mask_set == set()
    assert state.gate(1) == 1.0
    assert state.gate(3) == 1.0
    assert [e.event_type for e in log.get_events(stage="stage2")] == ["stage_start", "stage_end"]

    with pytest.raises(SelectionError):
        stage2_regularize(state, [], calibration(state), config)


def test_stage2_keeps_unrelated_masks():
    """Test that stage 2 un-masks the prune set only."""
    state = random_state()
    mask_layer(state, 0)
    mask_layer(state, 1)
    config = Stage2Config(lambda2=0.5, steps=2, lr=1e-3, eval_interval=100)
    stage2_regularize(state, PruneSet([1]), calibration(state), config)
    assert state.mask_set == {0}


def test_selection_needs_enough_unmasked_layers():
    """Test that selection cannot ask for more layers than are unmasked."""
    state = random_state()
    for idx in (0, 1, 2):
        mask_layer(state, idx)
    with pytest.raises(SelectionError):
        one_shot_selection(state, calibration(state), 2, QUICK)
    with pytest.raises(SelectionError):
        iterative_selection(state, calibration(state), 2, QUICK)
