import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdsep.backbone import (
    RMSProp,
    ShapeError,
    TapeError,
    Tensor,
    backward,
    clip_weights,
    grad,
    no_grad,
    ops,
    precision64,
    rmsprop_step,
    zero_grad,
)
from pdsep.backbone import gradcheck
from pdsep.backbone import ops as ops_module


def conv1d_oracle(x, w, stride=1, pad=(0, 0)):
    # cross-correlation by explicit loops
    B, cin, T = x.shape
    cout, _, k = w.shape
    xp = np.zeros((B, cin, T + pad[0] + pad[1]))
    xp[:, :, pad[0]:pad[0] + T] = x
    tout = (xp.shape[2] - k) // stride + 1
    y = np.zeros((B, cout, tout))
    for b in range(B):
        for o in range(cout):
            for t in range(tout):
                for c in range(cin):
                    for j in range(k):
                        y[b, o, t] += w[o, c, j] * xp[b, c, t * stride + j]
    return y


def conv2d_oracle(x, w, stride=1, pad=0):
    B, cin, H, W = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    y = np.zeros((B, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            y[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, w)
    return y


# -- forward ops -----------------------------------------------------------------

def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(3)), Tensor(m)).data, m)


def test_leaky_relu_negative_unit():
    assert ops.leaky_relu(Tensor([-1.0]), 0.2).data[0] == pytest.approx(-0.2)


def test_conv1d_causal_example():
    # kernel [1, 2] convolved with [3, 4, 5] is [3, 10, 13]; the op correlates, so flip the kernel
    x = Tensor(np.array([[[3.0, 4.0, 5.0]]]))
    w = Tensor(np.array([[[2.0, 1.0]]]))
    y = ops.conv1d(x, w, padding=(1, 0))
    np.testing.assert_allclose(y.data[0, 0], [3.0, 10.0, 13.0])


@pytest.mark.parametrize("stride,pad", [(1, (0, 0)), (1, (2, 1)), (2, (1, 1)), (3, (0, 2))])
def test_conv1d_matches_loop(stride, pad):
    rng = np.random.default_rng(stride)
    x = rng.standard_normal((2, 3, 11))
    w = rng.standard_normal((4, 3, 3))
    with precision64():
        y = ops.conv1d(Tensor(x), Tensor(w), stride=stride, padding=pad)
    np.testing.assert_allclose(y.data, conv1d_oracle(x, w, stride, pad), atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_loop(stride, pad):
    rng = np.random.default_rng(10 + stride)
    x = rng.standard_normal((2, 2, 7, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    with precision64():
        y = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad)
    np.testing.assert_allclose(y.data, conv2d_oracle(x, w, stride, pad), atol=1e-12)


def test_conv_bias_added_per_channel():
    x = Tensor(np.zeros((1, 1, 5)))
    w = Tensor(np.ones((2, 1, 3)))
    b = Tensor(np.array([1.5, -2.0]))
    y = ops.conv1d(x, w, b, padding=1)
    np.testing.assert_allclose(y.data[0], [[1.5] * 5, [-2.0] * 5])


def test_upsample_repeats():
    y = ops.upsample(Tensor(np.array([[[1.0, 2.0]]])))
    np.testing.assert_array_equal(y.data, [[[1, 1, 2, 2]]])
    y2 = ops.upsample(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    assert y2.shape == (1, 1, 4, 4)
    assert y2.data[0, 0, 3, 2] == 4.0


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        ops.conv1d(Tensor(np.zeros((1, 2, 8))), Tensor(np.zeros((1, 3, 3))))


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rejects_bad_rate(rate):
    with pytest.raises(ValueError):
        ops.dropout(Tensor(np.ones(4)), rate, np.random.default_rng(0))


def test_dropout_is_inverted():
    rng = np.random.default_rng(0)
    y = ops.dropout(Tensor(np.ones(100_000)), 0.5, rng).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.02


def test_dropout_fresh_mask_each_call():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones(64))
    assert not np.array_equal(ops.dropout(x, 0.5, rng).data, ops.dropout(x, 0.5, rng).data)


def test_default_precision_is_float32():
    assert Tensor([1.0]).data.dtype == np.float32
    with precision64():
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


# -- backward ----------------------------------------------------------------------

def test_backward_linear_sum():
    w = Tensor(np.arange(4.0), requires_grad=True)
    backward(ops.sum(ops.scale(w, 2.0)))
    np.testing.assert_array_equal(w.grad, [2, 2, 2, 2])


def test_backward_mean_square():
    w = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.mean(ops.mul(w, w)))
    np.testing.assert_allclose(w.grad, [1.0, 2.0])


def test_backward_resets_between_calls():
    w = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(3):
        backward(ops.sum(ops.scale(w, 3.0)))
    np.testing.assert_array_equal(w.grad, [3.0, 3.0])


def test_shared_subexpression_accumulates_within_one_pass():
    w = Tensor([3.0], requires_grad=True)
    h = ops.mul(w, w)
    backward(ops.sum(ops.add(h, h)))
    np.testing.assert_allclose(w.grad, [12.0])


def test_backward_on_untaped_tensor_rejected():
    with pytest.raises(TapeError):
        backward(Tensor(1.0))
    w = Tensor([1.0], requires_grad=True)
    with no_grad():
        loss = ops.sum(w)
    with pytest.raises(TapeError):
        backward(loss)


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        backward(ops.scale(w, 2.0))


def test_functional_grad_leaves_grad_untouched():
    w = Tensor([1.0, -2.0], requires_grad=True)
    (g,) = grad(ops.abs_sum(w), [w])
    np.testing.assert_array_equal(g, [1.0, -1.0])
    assert w.grad is None


def test_zero_grad():
    w = Tensor([1.0], requires_grad=True)
    backward(ops.sum(w))
    zero_grad([w])
    np.testing.assert_array_equal(w.grad, [0.0])


def test_deep_chain_does_not_recurse():
    w = Tensor([1.0], requires_grad=True)
    h = w
    for _ in range(5000):
        h = ops.add_scalar(h, 0.0)
    backward(ops.sum(h))
    assert w.grad[0] == 1.0


def test_forward_backward_finite_on_finite_inputs():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((1, 2, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 4)) * 10, requires_grad=True)
    y = ops.tanh(ops.conv1d(x, w, stride=2, padding=1))
    loss = ops.mean_abs(ops.sigmoid(ops.scale(y, 50.0)))
    backward(loss)
    assert np.isfinite(loss.data) and np.all(np.isfinite(x.grad)) and np.all(np.isfinite(w.grad))


# -- finite differences ----------------------------------------------------------------

@pytest.mark.parametrize("op", list(gradcheck.CATALOGUE))
def test_gradient_matches_finite_differences(op):
    (result,) = gradcheck.run_suite(cases=100, tol=1e-3, seed=0, only=[op])
    assert result.cases == 100
    assert result.passed, f"{op}: max relative error {result.max_rel_error:.3e}"


def test_gradcheck_catches_sign_bug(monkeypatch):
    original = ops_module._tanh_backward
    monkeypatch.setattr(ops_module, "_tanh_backward", lambda y, g: tuple(-v for v in original(y, g)))
    results = {r.op: r for r in gradcheck.run_suite(cases=5, only=["tanh", "sigmoid"])}
    assert not results["tanh"].passed
    assert results["sigmoid"].passed


def test_gradcheck_is_deterministic():
    a = gradcheck.run_suite(cases=3, seed=4, only=["conv2d"])
    b = gradcheck.run_suite(cases=3, seed=4, only=["conv2d"])
    assert a == b


# -- optimiser and clipping ----------------------------------------------------------

def test_rmsprop_first_step_value():
    p = Tensor([0.0], requires_grad=True, dtype=np.float64)
    p.grad = np.array([1.0])
    acc = np.zeros(1)
    rmsprop_step(p, acc, 5e-5, 0.9, 1e-8)
    # -lr * 1 / (sqrt(0.1) + eps)
    assert p.data[0] == pytest.approx(-1.5811e-4, rel=1e-4)
    assert acc[0] == pytest.approx(0.1)


def test_rmsprop_zero_gradient():
    p = Tensor([0.7], requires_grad=True, dtype=np.float64)
    p.grad = np.zeros(1)
    acc = np.array([0.5])
    rmsprop_step(p, acc, 5e-5, 0.9, 1e-8)
    assert p.data[0] == 0.7
    assert acc[0] == pytest.approx(0.45)


def test_rmsprop_rejects_missing_grad_and_bad_state():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError, match="no gradient"):
        rmsprop_step(p, np.zeros(1, np.float32), 1e-3, 0.9, 1e-8)
    p.grad = np.ones(1, np.float32)
    with pytest.raises(ValueError, match="shape"):
        rmsprop_step(p, np.zeros(2, np.float32), 1e-3, 0.9, 1e-8)


def test_rmsprop_default_learning_rate():
    assert RMSProp({"w": Tensor([0.0], requires_grad=True)}).lr == 5e-5


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_rmsprop_accumulator_nonnegative(g):
    p = Tensor(np.zeros_like(g), requires_grad=True, dtype=np.float64)
    opt = RMSProp({"p": p}, lr=1e-3)
    for scale in (1.0, -2.0, 0.0):
        p.grad = g * scale
        opt.step()
        assert np.all(opt.acc["p"] >= 0)


def test_rmsprop_deterministic():
    def run():
        rng = np.random.default_rng(5)
        p = Tensor(rng.standard_normal(10), requires_grad=True)
        opt = RMSProp({"p": p}, lr=1e-2)
        for _ in range(20):
            backward(ops.sum(ops.mul(ops.tanh(p), p)))
            opt.step()
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_clip_examples():
    p = Tensor([0.5, -0.005, -3.0])
    clip_weights([p], 0.1)
    np.testing.assert_allclose(p.data, [0.1, -0.005, -0.1])
    q = Tensor([-0.005])
    clip_weights([q], 0.01)
    assert q.data[0] == np.float32(-0.005)


@pytest.mark.parametrize("c", [0.0, -0.1])
def test_clip_rejects_nonpositive(c):
    with pytest.raises(ValueError):
        clip_weights([Tensor([1.0])], c)


@given(arrays(np.float32, st.integers(1, 50), elements=st.floats(-10, 10, width=32)), st.floats(1e-3, 5.0))
def test_clip_idempotent(values, c):
    once = Tensor(values.copy())
    clip_weights([once], c)
    twice = Tensor(once.data.copy())
    clip_weights([twice], c)
    np.testing.assert_array_equal(once.data, twice.data)
    assert np.all(np.abs(once.data) <= np.float32(c))


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.floats(-1, 1), st.floats(-1, 1))
def test_convolution_linearity(seed, a, b):
    # signals live in [-1, 1]; float32 arithmetic
    rng = np.random.default_rng(seed)
    k = Tensor(rng.uniform(-1, 1, (2, 1, 5)))
    x, y = rng.uniform(-1, 1, (2, 1, 1, 32))
    lhs = ops.conv1d(Tensor(a * x + b * y), k, padding=2).data
    rhs = a * ops.conv1d(Tensor(x), k, padding=2).data + b * ops.conv1d(Tensor(y), k, padding=2).data
    assert np.abs(lhs - rhs).max() <= 1e-6
