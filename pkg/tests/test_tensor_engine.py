import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import numeric_gradient_check
from src import tensor_engine as te
from src.errors import ConfigurationError, EngineStateError, NumericError
from src.model import BaselineConfig, build_baseline
from src.tensor_engine import Parameter, Tensor


def naive_conv2d(x, kernels, bias, stride=1, padding=0):
    channels, height, width = x.shape
    filters, _, kh, kw = kernels.shape
    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((filters, out_h, out_w))
    for f in range(filters):
        for i in range(out_h):
            for j in range(out_w):
                window = padded[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[f, i, j] = np.sum(window * kernels[f]) + bias[f]
    return out


def naive_conv1d(x, kernels, bias, stride=1, padding=0):
    filters, _, k = kernels.shape
    padded = np.pad(x, ((0, 0), (padding, padding)))
    out_len = (x.shape[1] + 2 * padding - k) // stride + 1
    out = np.zeros((filters, out_len))
    for f in range(filters):
        for i in range(out_len):
            out[f, i] = np.sum(padded[:, i * stride:i * stride + k] * kernels[f]) + bias[f]
    return out


def naive_maxpool(x, k):
    """Window scan over the trailing one or two axes of [C, L] or [C, H, W]."""
    if x.ndim == 2:
        return np.array([[x[c, i * k:(i + 1) * k].max() for i in range(x.shape[1] // k)]
                         for c in range(x.shape[0])])
    out = np.zeros((x.shape[0], x.shape[1] // k, x.shape[2] // k))
    for c in range(out.shape[0]):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                out[c, i, j] = x[c, i * k:(i + 1) * k, j * k:(j + 1) * k].max()
    return out


def naive_dense(x, weight, bias):
    out = np.zeros((x.shape[0], weight.shape[0]))
    for b in range(x.shape[0]):
        for o in range(weight.shape[0]):
            out[b, o] = sum(weight[o, i] * x[b, i] for i in range(x.shape[1])) + bias[o]
    return out


@st.composite
def conv2d_cases(draw):
    channels, filters = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    kh, kw = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    stride, padding = draw(st.integers(1, 3)), draw(st.integers(0, 2))
    height = draw(st.integers(max(1, kh - 2 * padding), 9))
    width = draw(st.integers(max(1, kw - 2 * padding), 9))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    return (rng.normal(size=(channels, height, width)), rng.normal(size=(filters, channels, kh, kw)),
            rng.normal(size=filters), stride, padding)


@st.composite
def conv1d_cases(draw):
    channels, filters = draw(st.integers(1, 3)), draw(st.integers(1, 4))
    k, stride, padding = draw(st.integers(1, 5)), draw(st.integers(1, 3)), draw(st.integers(0, 2))
    length = draw(st.integers(max(1, k - 2 * padding), 20))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    return (rng.normal(size=(channels, length)), rng.normal(size=(filters, channels, k)),
            rng.normal(size=filters), stride, padding)


# --- Tape mechanics ---

def test_backward_without_forward_raises():
    param = Parameter(np.ones(3), "p")
    with pytest.raises(EngineStateError):
        param.backward()


def test_backward_needs_a_scalar():
    param = Parameter(np.ones(3), "p")
    with pytest.raises(EngineStateError):
        te.mul(param, 2.0).backward()


def test_sum_of_parameter_has_unit_gradient():
    param = Parameter(np.arange(6.0).reshape(2, 3), "p")
    te.sum(param).backward()
    np.testing.assert_array_equal(param.grad, np.ones((2, 3)))


def test_unused_parameter_keeps_zero_gradient():
    used, unused = Parameter(np.ones(4), "used"), Parameter(np.ones(4), "unused")
    used.zero_grad()
    unused.zero_grad()
    te.sum(te.mul(used, 3.0)).backward()
    np.testing.assert_array_equal(used.grad, np.full(4, 3.0))
    np.testing.assert_array_equal(unused.grad, np.zeros(4))


def test_broadcast_add_reduces_gradient():
    matrix = Parameter(np.zeros((3, 4)), "m")
    row = Parameter(np.zeros(4), "r")
    te.sum(te.add(matrix, row)).backward()
    np.testing.assert_array_equal(row.grad, np.full(4, 3.0))


def test_no_grad_records_nothing():
    param = Parameter(np.ones(2), "p")
    with te.no_grad():
        out = te.mul(param, param)
    assert out.creator is None
    assert not out.requires_grad


def test_non_finite_forward_raises():
    with pytest.raises(NumericError):
        te.relu(Tensor([1.0, np.nan]))
    with pytest.raises(NumericError):
        te.log(Tensor([1.0, 0.0]))


# --- conv2d ---

def test_conv2d_zero_input_gives_bias():
    out = te.conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.random.default_rng(1).normal(size=(3, 2, 3, 3))),
                    Tensor([0.5, -1.0, 2.0]), padding=1)
    assert out.shape == (3, 5, 5)
    for channel, value in enumerate([0.5, -1.0, 2.0]):
        np.testing.assert_allclose(out.data[channel], value)


def test_conv2d_full_support_kernel_sums_input():
    x = np.arange(9.0).reshape(1, 3, 3)
    out = te.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
    assert out.shape == (1, 1, 1)
    assert out.item() == pytest.approx(36.0)


@settings(max_examples=60, deadline=None)
@given(conv2d_cases())
def test_conv2d_matches_loop_oracle(case):
    x, kernels, bias, stride, padding = case
    with te.default_dtype(np.float64):
        out = te.conv2d(Tensor(x), Tensor(kernels), Tensor(bias), stride, padding)
    np.testing.assert_allclose(out.data, naive_conv2d(x, kernels, bias, stride, padding),
                               rtol=1e-9, atol=1e-9)


def test_conv2d_channel_mismatch_names_dims():
    with pytest.raises(ConfigurationError, match="3 channels"):
        te.conv2d(Tensor(np.zeros((3, 6, 6))), Tensor(np.zeros((4, 2, 3, 3))), Tensor(np.zeros(4)))


def test_conv2d_kernel_larger_than_input():
    with pytest.raises(ConfigurationError):
        te.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)))


# --- conv1d ---

def test_conv1d_examples():
    zero = te.conv1d(Tensor(np.zeros((1, 10))), Tensor(np.ones((2, 1, 3))), Tensor([1.5, -2.0]), padding=1)
    np.testing.assert_allclose(zero.data, [[1.5] * 10, [-2.0] * 10])
    ones = te.conv1d(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 1, 3))), Tensor([0.0]))
    assert ones.shape == (1, 1)
    assert ones.item() == pytest.approx(3.0)


@settings(max_examples=60, deadline=None)
@given(conv1d_cases())
def test_conv1d_matches_loop_oracle(case):
    x, kernels, bias, stride, padding = case
    with te.default_dtype(np.float64):
        out = te.conv1d(Tensor(x), Tensor(kernels), Tensor(bias), stride, padding)
    np.testing.assert_allclose(out.data, naive_conv1d(x, kernels, bias, stride, padding),
                               rtol=1e-9, atol=1e-9)


# --- maxpool ---

def test_maxpool2d_examples():
    assert te.maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2).item() == 4.0
    constant = te.maxpool2d(Tensor(np.full((2, 4, 4), 7.0)), 2)
    np.testing.assert_array_equal(constant.data, np.full((2, 2, 2), 7.0))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4),
       st.integers(0, 2 ** 32 - 1))
def test_maxpool2d_matches_window_scan(channels, k, rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(channels, k * rows, k * cols))
    with te.default_dtype(np.float64):
        out = te.maxpool2d(Tensor(x), k).data
    np.testing.assert_array_equal(out, naive_maxpool(x, k))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_maxpool1d_matches_window_scan(channels, k, windows, seed):
    x = np.random.default_rng(seed).normal(size=(channels, k * windows))
    with te.default_dtype(np.float64):
        out = te.maxpool1d(Tensor(x), k).data
    np.testing.assert_array_equal(out, naive_maxpool(x, k))


def test_maxpool_gradient_goes_to_first_maximum():
    x = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
    te.sum(te.maxpool2d(x, 2)).backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])
    y = Tensor(np.array([[[2.0, 9.0, 9.0, 1.0]]]), requires_grad=True)
    te.sum(te.maxpool1d(y, 4)).backward()
    np.testing.assert_array_equal(y.grad[0, 0], [0.0, 1.0, 0.0, 0.0])


def test_maxpool_requires_divisible_input():
    with pytest.raises(ConfigurationError):
        te.maxpool2d(Tensor(np.zeros((1, 5, 4))), 2)
    with pytest.raises(ConfigurationError):
        te.maxpool1d(Tensor(np.zeros((1, 10))), 4)


# --- dense, softmax, cross-entropy ---

def test_dense_examples(rng):
    x = rng.normal(size=5)
    identity = te.dense(Tensor(x), Tensor(np.eye(5)), Tensor(np.zeros(5)))
    np.testing.assert_allclose(identity.data, x, atol=1e-6)
    bias = rng.normal(size=3)
    zero = te.dense(Tensor(np.zeros(5)), Tensor(rng.normal(size=(3, 5))), Tensor(bias))
    np.testing.assert_allclose(zero.data, bias, atol=1e-6)
    weight = rng.normal(size=(4, 5))
    np.testing.assert_allclose(te.dense(Tensor(x), Tensor(weight), Tensor(np.zeros(4))).data,
                               weight @ x, atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_dense_matches_loop_oracle(batch, in_features, out_features, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, in_features))
    weight = rng.normal(size=(out_features, in_features))
    bias = rng.normal(size=out_features)
    with te.default_dtype(np.float64):
        out = te.dense(Tensor(x), Tensor(weight), Tensor(bias)).data
    np.testing.assert_allclose(out, naive_dense(x, weight, bias), rtol=1e-9, atol=1e-9)


def test_dense_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        te.dense(Tensor(np.zeros(4)), Tensor(np.zeros((3, 5))), Tensor(np.zeros(3)))


def test_softmax_and_cross_entropy_examples():
    probs = te.softmax(Tensor(np.full(8, 2.5)))
    np.testing.assert_allclose(probs.data, np.full(8, 0.125), atol=1e-7)
    for label in (0, 7):
        loss = te.cross_entropy(Tensor(np.full((1, 8), 0.125)), [label])
        assert loss.item() == pytest.approx(math.log(8), abs=1e-6)


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(ConfigurationError):
        te.cross_entropy(Tensor(np.full((2, 8), 0.125)), [0, 8])
    with pytest.raises(ConfigurationError):
        te.cross_entropy(Tensor(np.full((2, 8), 0.125)), [0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-1e4, 1e4)), st.floats(-100, 100))
def test_softmax_is_a_shift_invariant_distribution(scores, shift):
    with te.default_dtype(np.float64):
        probs = te.softmax(Tensor(scores)).data
        shifted = te.softmax(Tensor(scores + shift)).data
    assert (probs >= 0).all()
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(probs, shifted, atol=1e-6)


# --- gradient checks (64-bit) ---

def _fixed_projection(shape, seed=11):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def test_dense_gradients(rng):
    with te.default_dtype(np.float64):
        x = Tensor(rng.normal(size=(6, 10)), requires_grad=True)
        weight = Parameter(rng.normal(size=(8, 10)), "w")
        bias = Parameter(rng.normal(size=8), "b")
        projection = _fixed_projection((6, 8))
        checked = numeric_gradient_check(
            lambda: te.sum(te.mul(te.dense(x, weight, bias), projection)), [x, weight, bias])
    assert checked >= 50


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1)])
def test_conv2d_gradients(rng, stride, padding):
    with te.default_dtype(np.float64):
        x = Tensor(rng.normal(size=(2, 2, 7, 7)), requires_grad=True)
        kernels = Parameter(rng.normal(size=(4, 2, 3, 3)), "k")
        bias = Parameter(rng.normal(size=4), "b")
        out_shape = te.conv2d(x, kernels, bias, stride, padding).shape
        projection = _fixed_projection(out_shape)
        checked = numeric_gradient_check(
            lambda: te.sum(te.mul(te.conv2d(x, kernels, bias, stride, padding), projection)),
            [x, kernels, bias])
    assert checked >= 100


def test_conv1d_gradients(rng):
    with te.default_dtype(np.float64):
        x = Tensor(rng.normal(size=(2, 3, 20)), requires_grad=True)
        kernels = Parameter(rng.normal(size=(4, 3, 5)), "k")
        bias = Parameter(rng.normal(size=4), "b")
        projection = _fixed_projection((2, 4, 20))
        checked = numeric_gradient_check(
            lambda: te.sum(te.mul(te.conv1d(x, kernels, bias, padding=2), projection)),
            [x, kernels, bias])
    assert checked >= 100


def test_maxpool_gradients(rng):
    # distinct values, spaced well beyond the differencing step
    values2d = rng.permutation(256).reshape(2, 2, 8, 8) * 0.01
    values1d = rng.permutation(120).reshape(2, 3, 20) * 0.01
    with te.default_dtype(np.float64):
        x2d = Tensor(values2d, requires_grad=True)
        x1d = Tensor(values1d, requires_grad=True)
        p2d, p1d = _fixed_projection((2, 2, 4, 4)), _fixed_projection((2, 3, 5))
        checked = numeric_gradient_check(lambda: te.sum(te.mul(te.maxpool2d(x2d, 2), p2d)), [x2d])
        checked += numeric_gradient_check(lambda: te.sum(te.mul(te.maxpool1d(x1d, 4), p1d)), [x1d])
    assert checked >= 100


def test_activation_and_loss_gradients(rng):
    with te.default_dtype(np.float64):
        scores = Parameter(rng.normal(size=(7, 8)), "scores")
        labels = rng.integers(0, 8, size=7)
        checked = numeric_gradient_check(
            lambda: te.cross_entropy(te.softmax(scores), labels), [scores])

        away_from_kink = rng.uniform(0.2, 1.0, size=(6, 10)) * rng.choice([-1, 1], size=(6, 10))
        x = Parameter(away_from_kink, "x")
        positive = Parameter(rng.uniform(0.5, 2.0, size=(6, 10)), "positive")
        projection = _fixed_projection((20, 6))

        def composite():
            mixed = te.add(te.relu(x), te.sigmoid(x))
            mixed = te.mul(mixed, te.log(positive))
            averaged = te.mean(te.stack([mixed, te.mul(mixed, 2.0)], axis=0), axis=0)
            widened = te.concat([averaged, te.sigmoid(averaged)], axis=1)
            return te.sum(te.mul(te.transpose(widened, (1, 0)), projection))

        checked += numeric_gradient_check(composite, [x, positive])
    assert checked >= 150


def test_full_baseline_gradients():
    with te.default_dtype(np.float64):
        graph = build_baseline(BaselineConfig((1, 48, 48)), seed=3)
        x = np.random.default_rng(5).normal(size=(1, 1, 48, 48))
        params = graph.named_parameters()
        sampled = [params[name] for name in ("conv1.weight", "conv2.weight", "conv3.bias",
                                             "dense1.weight", "dense2.weight")]
        checked = numeric_gradient_check(lambda: graph.loss([x], [2]), sampled, n_samples=50,
                                         h=1e-5, atol=1e-6)
    assert checked >= 50


# --- Adam ---

def test_adam_without_gradients_raises():
    with pytest.raises(EngineStateError):
        te.adam_step([Parameter(np.ones(2), "p")])


def test_adam_zero_gradient_leaves_parameters():
    param = Parameter(np.array([1.0, -2.0]), "p")
    param.zero_grad()
    te.adam_step([param], lr=0.1)
    np.testing.assert_array_equal(param.data, np.array([1.0, -2.0], dtype=np.float32))


def test_adam_single_step_is_bounded_by_lr():
    param = Parameter(np.array([1.0]), "p")
    te.sum(te.mul(param, 4.0)).backward()
    te.adam_step([param], lr=0.01)
    delta = float(param.data[0]) - 1.0
    assert -0.01 - 1e-6 <= delta < 0
    np.testing.assert_array_equal(param.grad, [0.0])


def test_adam_descends_a_parabola():
    param = Parameter(np.array([1.0]), "x")
    for _ in range(100):
        te.sum(te.mul(param, param)).backward()
        te.adam_step([param], lr=0.1)
    assert abs(float(param.data[0])) < 0.05
