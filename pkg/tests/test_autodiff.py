"""
Tests for the tensor tape, the differentiable ops and the optimizer.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trsp_prune.core import ops
from trsp_prune.core.early_stopping import EarlyStopConfig, EarlyStopping
from trsp_prune.core.enums import NormType
from trsp_prune.core.errors import DataError, NumericalError, ShapeError, TapeError
from trsp_prune.core.gradcheck import gradient_check
from trsp_prune.core.optim import Adam, adam_step
from trsp_prune.core.tensor import Parameter, Tape, Tensor, backward, count_macs

finite = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False, allow_infinity=False)
# Gate values away from zero, so a small L1 step cannot cross it
gates = st.one_of(
    st.just(0.0),
    st.floats(min_value=0.01, max_value=20.0),
    st.floats(min_value=-20.0, max_value=-0.01),
)


def test_matmul_forward_and_gradients():
    """Test matmul values and gradients on a hand-computed example."""
    a = Parameter([[1.0, 2.0], [3.0, 4.0]])
    b = Parameter([[5.0, 6.0], [7.0, 8.0]])

    with Tape() as tape:
        c = ops.matmul(a, b)
        loss = ops.sum_all(c)
    np.testing.assert_array_equal(c.data, [[19.0, 22.0], [43.0, 50.0]])

    tape.backward(loss)
    # d(sum(AB))/dA = 1 @ B^T, d/dB = A^T @ 1
    np.testing.assert_array_equal(a.grad, [[11.0, 15.0], [11.0, 15.0]])
    np.testing.assert_array_equal(b.grad, [[4.0, 4.0], [6.0, 6.0]])


def test_matmul_shape_errors():
    """Test that matmul rejects vectors and mismatched inner extents."""
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_counts_macs():
    """Test the multiply-accumulate counter."""
    with count_macs() as counter:
        ops.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
    assert counter.macs == 2 * 3 * 5 * 4


def test_broadcast_add_sums_gradient():
    """Test that a broadcast operand receives the summed gradient."""
    x = Parameter(np.ones((3, 4)))
    bias = Parameter(np.zeros(4))
    with Tape() as tape:
        loss = ops.sum_all(ops.add(x, bias))
    tape.backward(loss)
    np.testing.assert_array_equal(bias.grad, np.full(4, 3.0))

    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_scale_by_one_is_exact():
    """Test that scaling by 1.0 returns bit-identical values."""
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 7)))
    assert np.array_equal(ops.scale(x, 1.0).data, x.data)


def test_untracked_ops_do_not_record():
    """Test that constants inside a tape are not recorded."""
    with Tape() as tape:
        ops.add(Tensor(np.ones(2)), Tensor(np.ones(2)))
        assert len(tape) == 0
        ops.add(Parameter(np.ones(2)), Tensor(np.ones(2)))
        assert len(tape) == 1


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=finite))
def test_softmax_rows_are_distributions(values):
    """Test softmax outputs are positive and sum to one along the last axis."""
    y = ops.softmax(Tensor(values)).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite), st.floats(min_value=-5.0, max_value=5.0))
def test_softmax_is_shift_invariant(values, shift):
    """Test that adding a constant to every logit leaves softmax unchanged."""
    a = ops.softmax(Tensor(values)).data
    b = ops.softmax(Tensor(values + shift)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_layernorm_output_is_normalized():
    """Test that layernorm with identity affine gives zero mean and unit variance."""
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(3.0, 2.0, size=(4, 16)))
    out = ops.layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), 1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    with pytest.raises(ValueError):
        ops.layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), 0.0)
    with pytest.raises(ShapeError):
        ops.layernorm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), 1e-5)


def test_cross_entropy_uniform_logits():
    """Test that all-zero logits give a loss of ln(vocab)."""
    vocab = 7
    logits = Tensor(np.zeros((2, 5, vocab)))
    tokens = np.array([[0, 1, 2, 3, 4], [6, 5, 4, 3, 2]])
    assert ops.cross_entropy(logits, tokens).item() == pytest.approx(math.log(vocab))


def test_cross_entropy_rejects_bad_targets():
    """Test vocabulary and shape checks of the cross entropy."""
    logits = Tensor(np.zeros((1, 3, 4)))
    with pytest.raises(DataError):
        ops.cross_entropy(logits, np.array([[0, 1, 4]]))
    with pytest.raises(ShapeError):
        ops.cross_entropy(logits, np.array([[0, 1]]))


def test_cross_entropy_matches_log_sum_exp():
    """Test the cross entropy on a random 2x3x5 case against a scalar log-sum-exp loop."""
    rng = np.random.default_rng(3)
    logits = rng.normal(scale=3.0, size=(2, 3, 5))
    tokens = rng.integers(0, 5, size=(2, 3))

    terms = []
    for b in range(2):
        for j in range(2):
            row = [float(v) for v in logits[b, j]]
            top = max(row)
            lse = top + math.log(sum(math.exp(v - top) for v in row))
            terms.append(lse - row[int(tokens[b, j + 1])])
    expected = sum(terms) / len(terms)

    assert abs(ops.cross_entropy(Tensor(logits), tokens).item() - expected) < 1e-10


def test_gelu_gradient_at_half():
    """Test the GELU derivative at 0.5 against a central difference."""
    x = Parameter([0.5])
    with Tape() as tape:
        loss = ops.sum_all(ops.gelu(x))
    tape.backward(loss)

    h = 1e-5
    plus = ops.gelu(Tensor([0.5 + h])).item()
    minus = ops.gelu(Tensor([0.5 - h])).item()
    numeric = (plus - minus) / (2 * h)
    assert x.grad[0] == pytest.approx(numeric, rel=1e-6)


def test_l1_sum_and_norm_penalty_values():
    """Test the L1 sum and the L1/L2 norm penalties on small vectors."""
    assert ops.l1_sum(Tensor([1.0, -2.0, 0.5])).item() == pytest.approx(3.5)
    d = Tensor([3.0, 4.0])
    assert ops.norm_penalty(d, NormType.L2).item() == pytest.approx(5.0)
    assert ops.norm_penalty(d, NormType.L1).item() == pytest.approx(7.0)

    # Per-vector norms are averaged over all leading positions
    batch = Tensor(np.array([[[3.0, 4.0], [0.0, 0.0]], [[6.0, 8.0], [1.0, 0.0]]]))
    assert ops.norm_penalty(batch, NormType.L2, per_vector=True).item() == pytest.approx(4.0)


def test_norm_penalty_gradient_is_zero_at_zero():
    """Test that a zero difference gives a zero L2 gradient instead of NaN."""
    d = Parameter(np.zeros((2, 3)))
    with Tape() as tape:
        loss = ops.norm_penalty(d, NormType.L2, per_vector=True)
    tape.backward(loss)
    assert np.all(d.grad == 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=gates), st.floats(min_value=1e-3, max_value=1.0))
def test_l1_step_shrinks_gates(values, lam):
    """Test that a small step along the L1 subgradient never increases the L1 norm."""
    g = Parameter(values)
    with Tape() as tape:
        loss = ops.scale(ops.l1_sum(g), lam)
    tape.backward(loss)
    before = np.abs(values).sum()
    after = np.abs(values - 1e-4 * g.grad).sum()
    assert after <= before + 1e-12


def test_gather_accumulates_repeated_ids():
    """Test that gather scatter-adds gradients for repeated ids."""
    table = Parameter(np.arange(6.0).reshape(3, 2))
    with Tape() as tape:
        loss = ops.sum_all(ops.gather(table, np.array([0, 2, 2])))
    tape.backward(loss)
    np.testing.assert_array_equal(table.grad, [[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]])

    with pytest.raises(ShapeError):
        ops.gather(table, np.array([3]))


def test_gather_with_scalar_id_is_a_scalar():
    """Test that a scalar id selects a 0-d entry whose gradient flows back to its row."""
    gates = Parameter([1.0, 0.5, 2.0])
    assert ops.gather(gates, 1).shape == ()

    for shape in [(), (3,), (2, 4), (2, 3, 4)]:
        gates.zero_grad()
        x = Parameter(np.full(shape, 2.0))
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(x, ops.gather(gates, 1)))
        assert loss.shape == ()
        tape.backward(loss)
        np.testing.assert_array_equal(gates.grad, [0.0, 2.0 * x.size, 0.0])
        np.testing.assert_array_equal(x.grad, np.full(shape, 0.5))


def test_backward_twice_is_an_error():
    """Test that a tape can only be differentiated once."""
    x = Parameter([1.0, 2.0])
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(x, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_rejects_non_scalar_and_foreign_losses():
    """Test the tape's loss checks."""
    x = Parameter([1.0, 2.0])
    with Tape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(TapeError):
        tape.backward(y)

    with Tape() as other:
        z = ops.sum_all(ops.mul(x, x))
    with pytest.raises(TapeError):
        tape.backward(z)
    other.backward(z)

    with pytest.raises(TapeError):
        backward(Tensor(1.0))


def test_non_finite_values_abort():
    """Test that an op producing NaN or Inf raises NumericalError."""
    with pytest.raises(NumericalError):
        ops.mul(Tensor([1e200]), Tensor([1e200]))
    with pytest.raises(NumericalError):
        ops.add(Tensor([np.nan]), Tensor([0.0]))


def test_elementwise_dispatch():
    """Test dispatch by name and the unknown-kind error."""
    x = Tensor([1.0, -1.0])
    np.testing.assert_array_equal(ops.elementwise("scale", x, 2.0).data, [2.0, -2.0])
    with pytest.raises(ValueError):
        ops.elementwise("relu", x)


def test_gradient_check_on_composite_loss():
    """Test analytic gradients of a small network against finite differences."""
    rng = np.random.default_rng(0)
    w = Parameter(rng.normal(size=(6, 5)), name="w")
    gamma = Parameter(rng.normal(1.0, 0.1, size=6), name="gamma")
    beta = Parameter(rng.normal(0.0, 0.1, size=6), name="beta")
    x = Tensor(rng.normal(size=(2, 3, 6)))
    tokens = rng.integers(0, 5, size=(2, 3))

    def loss_fn():
        h = ops.layernorm(x, gamma, beta, 1e-5)
        h = ops.gelu(ops.matmul(h, w))
        return ops.cross_entropy(ops.softmax(h), tokens)

    result = gradient_check(loss_fn, [w, gamma, beta], n_samples=40)
    assert result.max_rel_error < 1e-4
    assert len(result.samples) == 40


def test_adam_first_step_matches_formula():
    """Test one Adam step against the bias-corrected closed form."""
    p = Parameter([1.0, -2.0, 0.5])
    p.grad[:] = [0.5, -0.1, 0.0]
    lr, eps = 0.1, 1e-8
    optimizer = adam_step([p], lr=lr, eps=eps)

    # After bias correction m_hat = g and v_hat = g^2 on the first step
    g = np.array([0.5, -0.1, 0.0])
    expected = np.array([1.0, -2.0, 0.5]) - lr * g / (np.abs(g) + eps)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    assert np.all(p.grad == 0.0)
    assert optimizer.t == 1


def test_adam_groups_and_freeze():
    """Test per-group learning rates and frozen entries."""
    a = Parameter([1.0, 1.0])
    b = Parameter([1.0])
    optimizer = Adam([a], lr=0.1)
    optimizer.add_param_group([b], lr=0.01)
    optimizer.freeze(a, np.array([True, False]))

    a.grad[:] = [1.0, 1.0]
    b.grad[:] = [1.0]
    optimizer.step()
    assert a.data[0] == 1.0
    assert a.data[1] == pytest.approx(0.9)
    assert b.data[0] == pytest.approx(0.99)

    with pytest.raises(ValueError):
        optimizer.add_param_group([a], lr=0.1)


def test_early_stopping():
    """Test early stopping after consecutive non-improving evaluations."""
    stopper = EarlyStopping(EarlyStopConfig(threshold=2, min_delta=0.1))
    assert not stopper.update(1.0)
    assert not stopper.update(0.5)
    assert not stopper.update(0.45)  # improvement below min_delta
    assert stopper.update(0.44)
    assert stopper.best == 0.5

    with pytest.raises(ValueError):
        EarlyStopping(EarlyStopConfig(threshold=0))
