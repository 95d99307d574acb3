import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnembed.errors import ContractError, DimensionError, NumericError
from attnembed.tensor import (
    Tensor,
    backward,
    concat,
    conv1d_valid,
    dropout,
    exp,
    finite_difference_check,
    gelu,
    layer_normalize,
    linear,
    matmul,
    relu,
    softmax_rows,
    stack,
)


def param(rng, *shape, name=None):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


# matmul

def test_matmul_identity_left():
    a = np.array([[2.0, -1.0], [0.5, 3.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    ref = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            for k in range(8):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, ref, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_gradient():
    rng = np.random.default_rng(1)
    a, b = param(rng, 3, 2, 4, name="a"), param(rng, 4, 5, name="b")
    rep = finite_difference_check(lambda: (matmul(a, b) ** 2).sum(), [a, b])
    assert rep.max_relative_error < 1e-7


# softmax

def test_softmax_uniform_row():
    np.testing.assert_allclose(softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)


def test_softmax_shift_invariance():
    x = np.array([[0.3, -1.2, 2.0, 0.7]])
    np.testing.assert_allclose(softmax_rows(Tensor(x + 17.5)).data, softmax_rows(Tensor(x)).data, atol=1e-15)


def test_softmax_exp_sum_oracle():
    from decimal import Decimal, getcontext

    getcontext().prec = 50
    e = [Decimal(v).exp() for v in (1, 2, 3)]
    ref = [float(v / sum(e)) for v in e]
    np.testing.assert_allclose(softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0], ref, rtol=0, atol=1e-12)


def test_softmax_large_logits_stable():
    out = softmax_rows(Tensor([[1000.0, 999.0, -1000.0]])).data
    assert np.all(np.isfinite(out))
    assert abs(out.sum() - 1) < 1e-12


def test_softmax_non_finite_raises():
    with pytest.raises(NumericError):
        softmax_rows(Tensor([[0.0, np.nan]]))


def test_softmax_temperature_divides():
    x = np.array([[1.0, 3.0]])
    np.testing.assert_allclose(softmax_rows(Tensor(x), temperature=2.0).data, softmax_rows(Tensor(x / 2)).data, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(0.1, 10))
def test_softmax_rows_stochastic(row, temp):
    out = softmax_rows(Tensor([row]), temperature=temp).data
    assert np.all(out >= 0)
    assert abs(out.sum() - 1) < 1e-12


# conv1d

def test_conv1d_hand_example():
    out = conv1d_valid(Tensor([1.0, 2.0, 3.0, 4.0]), Tensor([0.5, 0.5]), 0.0, stride=2)
    np.testing.assert_allclose(out.data, [1.5, 3.5])


def test_conv1d_unit_kernel_identity():
    x = np.arange(7.0) ** 2
    np.testing.assert_array_equal(conv1d_valid(Tensor(x), Tensor([1.0]), 0.0, 1).data, x)


def test_conv1d_loop_oracle():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=32), rng.normal(size=8), 0.3
    n_out = (32 - 8) // 4 + 1
    ref = [b + sum(w[i] * x[j * 4 + i] for i in range(8)) for j in range(n_out)]
    np.testing.assert_allclose(conv1d_valid(Tensor(x), Tensor(w), b, 4).data, ref, atol=1e-12)


def test_conv1d_kernel_too_long():
    with pytest.raises(DimensionError):
        conv1d_valid(Tensor(np.ones(3)), Tensor(np.ones(4)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 9))
def test_conv1d_output_length(n, k, stride):
    if k > n:
        return
    out = conv1d_valid(Tensor(np.zeros(n)), Tensor(np.zeros(k)), 0.0, stride)
    assert out.shape[-1] == (n - k) // stride + 1


def test_conv1d_gradients():
    rng = np.random.default_rng(3)
    x, w = param(rng, 2, 20, name="x"), param(rng, 6, name="w")
    b = Tensor(np.array(0.1), requires_grad=True, name="b")
    rep = finite_difference_check(lambda: (conv1d_valid(x, w, b, 3) ** 2).sum(), [x, w, b])
    assert rep.max_relative_error < 1e-7


# layer norm

def test_layer_norm_constant_is_zero():
    out = layer_normalize(Tensor(np.full(5, 3.0)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
    np.testing.assert_array_equal(out.data, np.zeros(5))


def test_layer_norm_two_points():
    out = layer_normalize(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-14)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)


def test_layer_norm_statistics():
    x = np.random.default_rng(4).normal(3.0, 5.0, size=64)
    eps = 1e-5
    out = layer_normalize(Tensor(x), eps=eps).data
    assert abs(out.mean()) < 1e-10
    assert abs(out.var() - x.var() / (x.var() + eps)) < 1e-8


def test_layer_norm_gradient():
    rng = np.random.default_rng(5)
    x, g, o = param(rng, 3, 6, name="x"), param(rng, 6, name="g"), param(rng, 6, name="o")
    w = rng.normal(size=(3, 6))
    rep = finite_difference_check(lambda: (layer_normalize(x, g, o) * w).sum(), [x, g, o])
    assert rep.max_relative_error < 1e-7


# backward contract

def test_backward_sum_of_squares():
    x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_allclose(x.grad, [2.0, -4.0, 1.0])


def test_backward_product_rule():
    a, b = Tensor(3.0, requires_grad=True), Tensor(-2.0, requires_grad=True)
    backward(a * b)
    assert a.grad == -2.0 and b.grad == 3.0


def test_backward_non_scalar_raises():
    with pytest.raises(ContractError):
        backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


@pytest.mark.filterwarnings("ignore:divide by zero")
def test_backward_non_finite_loss_raises():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(NumericError):
        backward((x / 0.0).sum())


def test_backward_reuse_accumulates():
    rng = np.random.default_rng(6)
    x = param(rng, 4, name="x")
    y = lambda: (x * x).sum() + (exp(x) * x).sum()  # noqa: E731
    x.grad = None
    backward(y())
    analytic = x.grad.copy()
    np.testing.assert_allclose(analytic, 2 * x.data + np.exp(x.data) * (1 + x.data), atol=1e-12)
    assert finite_difference_check(y, [x]).max_relative_error < 1e-7


def test_backward_broadcast_unbroadcasts():
    rng = np.random.default_rng(7)
    a, b = param(rng, 3, 4, name="a"), param(rng, 4, name="b")
    backward((a + b).sum())
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_frozen_parameter_absent_from_report():
    rng = np.random.default_rng(8)
    a = param(rng, 3, name="a")
    frozen = Tensor(rng.normal(size=3), requires_grad=False, name="frozen")
    rep = finite_difference_check(lambda: (a * frozen).sum() ** 2, [a, frozen])
    assert set(rep.per_parameter_errors) == {"a"}


def test_gradcheck_quadratic_is_exact():
    rng = np.random.default_rng(9)
    a = param(rng, 1, 5, name="a")
    m = rng.normal(size=(5, 5))
    rep = finite_difference_check(lambda: ((a @ Tensor(m @ m.T)) * a).sum() * 0.5, [a])
    assert rep.max_relative_error < 1e-8
    assert rep.worst_parameter == "a"
    assert rep.max_relative_error == max(rep.per_parameter_errors.values())


def test_gradcheck_skips_zero_gradients():
    a = Tensor(np.ones(3), requires_grad=True, name="unused")
    b = Tensor(np.ones(3), requires_grad=True, name="used")
    rep = finite_difference_check(lambda: (b * b).sum() + (a * 0.0).sum(), [a, b])
    assert "unused" not in rep.per_parameter_errors


# randomized gradient agreement for every differentiable op

OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "pow": lambda a, b: (a * a + 1.0) ** 1.5 + b,
    "exp": lambda a, b: exp(a * 0.5) * b,
    "gelu": lambda a, b: gelu(a) * b,
    "relu": lambda a, b: relu(a + 0.05) * b,
    "matmul": lambda a, b: a @ b.T,
    "linear": lambda a, b: linear(a, b.T, b[:, 0]),
    "softmax": lambda a, b: softmax_rows(a, temperature=1.7) * b,
    "layernorm": lambda a, b: layer_normalize(a, b[0], b[1]),
    "mean_axis": lambda a, b: a.mean(axis=0) * b.sum(axis=0),
    "transpose": lambda a, b: a.T @ b,
    "getitem": lambda a, b: a[:, 1:3] * b[:, ::2][:, :2],
    "concat": lambda a, b: concat([a, b * 2.0], axis=-1),
    "stack": lambda a, b: stack([a, b], axis=1),
    "reshape": lambda a, b: a.reshape(-1) * b.reshape(-1),
    "broadcast": lambda a, b: a[0].broadcast_to((3, 4)) * b,
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradients_randomized(op):
    fn = OPS[op]
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        a, b = param(rng, 3, 4, name="a"), param(rng, 3, 4, name="b")
        w = rng.normal(size=fn(a, b).shape)
        rep = finite_difference_check(lambda: (fn(a, b) * w).sum(), [a, b])
        assert rep.max_relative_error <= 1e-4, (op, trial, rep)


def test_dropout_inactive_paths():
    x = Tensor(np.ones((4, 4)))
    assert dropout(x, 0.0, np.random.default_rng(0)) is x
    assert dropout(x, 0.5, None) is x


def test_dropout_is_inverted_and_seeded():
    x = Tensor(np.ones((200, 200)))
    a = dropout(x, 0.25, np.random.default_rng(3)).data
    b = dropout(x, 0.25, np.random.default_rng(3)).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1 / 0.75}
    assert abs(a.mean() - 1.0) < 0.02


def test_gelu_matches_tanh_formula():
    v = np.linspace(-4, 4, 33)
    ref = 0.5 * v * (1 + np.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v**3)))
    np.testing.assert_allclose(gelu(Tensor(v)).data, ref, atol=1e-14)
