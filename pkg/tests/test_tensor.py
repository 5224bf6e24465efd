import math

import numpy as np
import numpy.testing as npt
import pytest

from groupact.errors import (
    ConfigError,
    DataError,
    EmptySetError,
    NumericsError,
    ShapeError,
    UsageError,
)
from groupact.tensor import (
    MODE_INFER,
    MODE_TRAIN,
    Graph,
    Tensor,
    add,
    concat_last_dim,
    cross_entropy,
    dropout,
    layer_norm,
    matmul,
    max_over_set,
    mul,
    relu,
    reshape,
    softmax_rows,
    sum_all,
    transpose,
)

from helpers import check_gradients, numeric_gradient, rel_err


def _rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- basics


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericsError):
        Tensor([1.0, float("nan")])
    with pytest.raises(NumericsError):
        Tensor([[float("inf")]])


def test_tensor_grad_allocation():
    t = Tensor([[1.0, 2.0]], requires_grad=True)
    npt.assert_array_equal(t.grad, np.zeros((1, 2)))
    assert Tensor([[1.0]]).grad is None


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(Tensor(np.eye(2)), a)
    npt.assert_array_equal(out.data, a.data)


def test_matmul_by_hand():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    npt.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))
    with pytest.raises(ShapeError):
        matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))


def test_matmul_gradcheck_tight():
    # the plain product should be accurate well below the generic tolerance
    rng = _rng(1)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    worst = check_gradients(lambda: sum_all(matmul(a, b)), [("a", a), ("b", b)], tol=1e-6)
    assert worst <= 1e-6


def test_add_bias_broadcast():
    m = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    check_gradients(lambda: sum_all(mul(add(m, b), add(m, b))), [("m", m), ("b", b)])
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


# ---------------------------------------------------------------- softmax


def test_softmax_uniform_row():
    out = softmax_rows(Tensor([[0.0, 0.0, 0.0]]))
    npt.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)


def test_softmax_single_element_row():
    for x in (-5.0, 0.0, 17.3):
        npt.assert_array_equal(softmax_rows(Tensor([[x]])).data, [[1.0]])


def test_softmax_derived_values():
    # e^1/(e^1+e^2) and e^2/(e^1+e^2)
    out = softmax_rows(Tensor([[1.0, 2.0]]))
    npt.assert_allclose(out.data, [[0.2689414213699951, 0.7310585786300049]], atol=1e-5)


def test_softmax_rows_sum_to_one():
    rng = _rng(2)
    for _ in range(20):
        x = Tensor(rng.standard_normal((5, 7)) * 10)
        sums = softmax_rows(x).data.sum(axis=1)
        npt.assert_allclose(sums, np.ones(5), atol=1e-9)


def test_softmax_large_values_stay_finite():
    out = softmax_rows(Tensor([[1000.0, 1000.1]]))
    assert np.isfinite(out.data).all()
    npt.assert_allclose(out.data.sum(), 1.0, atol=1e-12)


def test_softmax_gradcheck():
    rng = _rng(3)
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 5)))
    check_gradients(lambda: sum_all(mul(softmax_rows(x), w)), [("x", x)])


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_row():
    out = layer_norm(Tensor([[5.0, 5.0, 5.0, 5.0]]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    npt.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-9)


def test_layer_norm_two_values():
    out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    npt.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_row_statistics():
    # variance must dominate the 1e-5 epsilon for the unit-variance claim
    rng = _rng(4)
    x = Tensor(rng.standard_normal((6, 16)) * 10)
    out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    npt.assert_allclose(out.mean(axis=1), np.zeros(6), atol=1e-9)
    npt.assert_allclose((out ** 2).mean(axis=1), np.ones(6), atol=1e-6)


def test_layer_norm_gradcheck():
    rng = _rng(5)
    x = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    gain = Tensor(rng.standard_normal(8), requires_grad=True)
    bias = Tensor(rng.standard_normal(8), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 8)))
    check_gradients(
        lambda: sum_all(mul(layer_norm(x, gain, bias), w)),
        [("x", x), ("gain", gain), ("bias", bias)],
    )


# ---------------------------------------------------------------- dropout


def test_dropout_rate_zero_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    for mode in (MODE_TRAIN, MODE_INFER):
        assert dropout(x, 0.0, mode, _rng(0)) is x


def test_dropout_inference_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert dropout(x, 0.1, MODE_INFER) is x


def test_dropout_bad_rate():
    x = Tensor([[1.0]])
    for rate in (-0.1, 1.0, 1.5):
        with pytest.raises(ConfigError):
            dropout(x, rate, MODE_TRAIN, _rng(0))


def test_dropout_requires_rng_in_train_mode():
    with pytest.raises(UsageError):
        dropout(Tensor([[1.0]]), 0.1, MODE_TRAIN)


def test_dropout_mask_statistics():
    x = Tensor(np.full((100, 1000), 2.0))
    out = dropout(x, 0.1, MODE_TRAIN, _rng(6)).data
    survived = (out != 0).mean()
    assert abs(survived - 0.9) < 0.01
    assert abs(out.mean() - 2.0) / 2.0 < 0.02  # inverted scaling preserves the mean


def test_dropout_gradcheck_uses_saved_mask():
    x = Tensor(np.ones((4, 4)), requires_grad=True)
    x.zero_grad()
    with Graph(MODE_TRAIN):
        out = dropout(x, 0.5, MODE_TRAIN, _rng(7))
        sum_all(out).backward()
    # gradient is the exact mask scaling used in forward
    npt.assert_array_equal(x.grad * x.data, out.data)


# ---------------------------------------------------------------- relu, concat, max


def test_relu_values_and_grad():
    x = Tensor([[-1.0, 0.0, 2.0]], requires_grad=True)
    x.zero_grad()
    with Graph(MODE_TRAIN):
        sum_all(relu(x)).backward()
    npt.assert_array_equal(x.grad, [[0.0, 0.0, 1.0]])


def test_concat_last_dim_roundtrip():
    rng = _rng(8)
    a = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    out = concat_last_dim([a, b])
    assert out.shape == (3, 6)
    npt.assert_array_equal(out.data[:, :2], a.data)
    w = Tensor(rng.standard_normal((3, 6)))
    check_gradients(lambda: sum_all(mul(concat_last_dim([a, b]), w)), [("a", a), ("b", b)])
    with pytest.raises(ShapeError):
        concat_last_dim([a, Tensor(np.ones((2, 2)))])


def test_max_over_set_single_row():
    row = np.array([[3.0, -1.0, 2.0]])
    npt.assert_array_equal(max_over_set(Tensor(row)).data, row[0])


def test_max_over_set_by_hand():
    npt.assert_array_equal(max_over_set(Tensor([[1.0, 9.0], [5.0, 2.0]])).data, [5.0, 9.0])


def test_max_over_set_permutation_invariant_bitwise():
    rng = _rng(9)
    x = rng.standard_normal((7, 5))
    base = max_over_set(Tensor(x)).data
    for _ in range(10):
        perm = rng.permutation(7)
        assert np.array_equal(max_over_set(Tensor(x[perm])).data, base)


def test_max_over_set_empty_and_ties():
    with pytest.raises(EmptySetError):
        max_over_set(Tensor(np.zeros((0, 4))))
    # tie routes gradient to the lowest row index
    x = Tensor([[1.0, 2.0], [1.0, 2.0]], requires_grad=True)
    x.zero_grad()
    with Graph(MODE_TRAIN):
        sum_all(max_over_set(x)).backward()
    npt.assert_array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0]])


def test_max_over_set_gradcheck():
    rng = _rng(10)
    x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal(4).reshape(1, 4))
    check_gradients(
        lambda: sum_all(mul(reshape(max_over_set(x), (1, 4)), w)), [("x", x)]
    )


# ---------------------------------------------------------------- cross entropy


def test_cross_entropy_uniform():
    loss = cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
    npt.assert_allclose(loss.item(), math.log(4), atol=1e-12)


def test_cross_entropy_goes_to_zero_with_margin():
    last = None
    for margin in (1.0, 5.0, 20.0):
        logits = np.zeros((1, 3))
        logits[0, 2] = margin
        loss = cross_entropy(Tensor(logits), np.array([2])).item()
        if last is not None:
            assert loss < last
        last = loss
    assert last < 1e-8


def test_cross_entropy_derived_value():
    loss = cross_entropy(Tensor([[1.0, 2.0]]), np.array([1]))
    npt.assert_allclose(loss.item(), 0.3132616875182228, atol=1e-5)


def test_cross_entropy_label_errors():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(DataError):
        cross_entropy(logits, np.array([0, 3]))
    with pytest.raises(DataError):
        cross_entropy(logits, np.array([-1, 0]))
    with pytest.raises(ShapeError):
        cross_entropy(logits, np.array([0]))


def test_cross_entropy_gradcheck():
    rng = _rng(11)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    labels = np.array([1, 0, 5, 2])
    check_gradients(lambda: cross_entropy(x, labels), [("x", x)])


# ---------------------------------------------------------------- backward mechanics


def test_backward_sum_gives_ones():
    p = Tensor(np.zeros((2, 3)), requires_grad=True)
    with Graph(MODE_TRAIN):
        sum_all(p).backward()
    npt.assert_array_equal(p.grad, np.ones((2, 3)))


def test_backward_accumulates_across_calls():
    p = Tensor(np.zeros(3), requires_grad=True)
    for expect in (1.0, 2.0):
        with Graph(MODE_TRAIN):
            sum_all(p).backward()
        npt.assert_array_equal(p.grad, np.full(3, expect))


def test_backward_disconnected_parameter_stays_zero():
    p = Tensor(np.ones(2), requires_grad=True)
    q = Tensor(np.ones(2), requires_grad=True)
    with Graph(MODE_TRAIN):
        sum_all(p).backward()
    npt.assert_array_equal(q.grad, np.zeros(2))


def test_backward_rejects_non_scalar():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    with Graph(MODE_TRAIN):
        out = add(p, p)
        with pytest.raises(UsageError):
            out.backward()


def test_backward_requires_recorded_history():
    with pytest.raises(UsageError):
        sum_all(Tensor(np.ones(2), requires_grad=True)).backward()


def test_inference_graph_records_nothing():
    with Graph(MODE_INFER) as g:
        out = add(Tensor([1.0]), Tensor([2.0]))
    assert g.nodes == [] and out._graph is None


def test_shared_subexpression_gradient():
    # x used twice: d/dx sum(x*x) = 2x
    x = Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True)
    x.zero_grad()
    with Graph(MODE_TRAIN):
        sum_all(mul(x, x)).backward()
    npt.assert_allclose(x.grad, 2 * x.data, atol=1e-12)


def test_composed_graph_gradcheck():
    # one expression through most ops at once
    rng = _rng(12)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    w1 = Tensor(rng.standard_normal((6, 6)), requires_grad=True)
    gain = Tensor(np.ones(6), requires_grad=True)
    bias = Tensor(np.zeros(6), requires_grad=True)

    def loss():
        h = relu(matmul(x, w1))
        h = layer_norm(add(h, x), gain, bias)
        h = softmax_rows(matmul(h, transpose(w1)))
        pooled = reshape(max_over_set(h), (1, 6))
        return add(cross_entropy(h, np.array([0, 1, 2, 3])), sum_all(mul(pooled, 0.5)))

    check_gradients(loss, [("x", x), ("w1", w1), ("gain", gain), ("bias", bias)])
