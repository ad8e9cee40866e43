import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from asid.errors import ContractError, DimensionError, NumericError
from asid.tensor import (OP_COUNTS, Tape, Tensor, add, concat, count_ops, gelu, matmul, mean, mul, softmax,
                         split, sum_, sigmoid)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_integer_input_promoted_to_float():
    assert Tensor([1, 2, 3]).dtype == np.float64


def test_item_rejects_non_scalar():
    assert Tensor([[2.5]]).item() == 2.5
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()


def test_broadcast_add_gradient_sums_over_broadcast_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    with Tape() as tape:
        loss = sum_(add(a, b))
    g = tape.backward(loss)
    np.testing.assert_array_equal(g[b], [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(g[a], np.ones((2, 3)))


def test_shared_input_accumulates():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_(mul(x, x))
    assert tape.backward(loss)[x][0] == pytest.approx(6.0)


def test_tape_is_single_use_until_reset():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_(mul(x, 2.0))
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)
    tape.reset()
    with tape:
        loss = sum_(mul(x, 3.0))
    assert tape.backward(loss)[x][0] == 3.0


def test_backward_needs_scalar_from_this_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = mul(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)
    with Tape():
        z = sum_(x)
    with pytest.raises(ContractError):
        tape.backward(z)


def test_nothing_recorded_outside_a_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = mul(x, 2.0)
    assert not y.requires_grad


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_counts_macs():
    with count_ops() as c:
        matmul(Tensor(np.ones((5, 2, 3))), Tensor(np.ones((3, 4))))
    assert c["matmul"] == 1 and c["macs"] == 5 * 2 * 3 * 4


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax(Tensor([1.0, np.nan]))


def test_softmax_stable_for_large_logits():
    out = softmax(Tensor([1000.0, 1000.0])).numpy()
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_gelu_matches_reference_values():
    # tanh-approximate GELU, values from an independent framework
    expect = [-0.00363739, -0.04540231, -0.15880801, 0.0, 0.84119199, 1.95459769, 2.99636261]
    np.testing.assert_allclose(gelu(Tensor(np.linspace(-3, 3, 7))).numpy(), expect, atol=1e-8)


def test_sigmoid_saturates_without_overflow():
    out = sigmoid(Tensor([-800.0, 0.0, 800.0])).numpy()
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    rows = softmax(Tensor(x), axis=-1).numpy().sum(axis=-1)
    np.testing.assert_allclose(rows, 1.0, atol=1e-12)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(1, 3))
def test_split_concat_round_trip(widths, lead):
    x = Tensor(np.arange(lead * sum(widths) * 2, dtype=float).reshape(lead, sum(widths), 2))
    parts = split(x, widths, axis=1)
    assert [p.shape[1] for p in parts] == widths
    np.testing.assert_array_equal(concat(parts, axis=1).numpy(), x.numpy())


def test_split_widths_must_cover_axis():
    with pytest.raises(DimensionError):
        split(Tensor(np.ones((2, 5))), [2, 2], axis=1)


def test_concat_rejects_mismatched_shapes():
    with pytest.raises(DimensionError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_mean_gradient():
    x = Tensor(np.ones((2, 4)), requires_grad=True)
    with Tape() as tape:
        loss = mean(x)
    np.testing.assert_allclose(tape.backward(loss)[x], np.full((2, 4), 1 / 8))


def test_op_counter_is_global_and_monotone():
    before = OP_COUNTS["add"]
    add(Tensor(1.0), Tensor(2.0))
    assert OP_COUNTS["add"] == before + 1
