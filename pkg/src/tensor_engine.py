"""
tensor_engine.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Minimal reverse-mode automatic differentiation engine used by every network
    in the toolkit. Forward passes execute eagerly on numpy arrays and record a
    tape of Function nodes; backward() walks the tape in reverse topological
    order and accumulates gradients on leaf tensors (Parameters).

    Provided operations:
    - layer primitives: conv2d, conv1d, maxpool2d, maxpool1d, dense
    - activations and losses: relu, sigmoid, log, softmax, cross_entropy
    - plumbing for fusion graphs: add, mul, reshape, transpose, concat, stack,
      sum, mean
    - adam_step, the optimizer update
"""

import logging
from contextlib import contextmanager
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import ConfigurationError, EngineStateError, NumericError

logger = logging.getLogger(__name__)

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


@contextmanager
def default_dtype(dtype):
    """Run the enclosed code with a different floating dtype (64-bit oracles)."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


@contextmanager
def no_grad():
    """Forward passes inside this block record no tape."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _ensure_finite(array: np.ndarray, where: str) -> None:
    if not np.isfinite(array).all():
        raise NumericError(f"{where} produced non-finite values")


class Tensor:
    """
    n-dimensional floating array with an optional gradient buffer.

    `creator` is the Function that produced the tensor, or None for leaves.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 creator: Optional["Function"] = None):
        array = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(array) if array.ndim else array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        _ensure_finite(grad, "backward pass")
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Populate `.grad` on every leaf reachable from this scalar."""
        if self.creator is None:
            raise EngineStateError(
                "backward() needs a loss produced by a recorded forward pass")
        if self.data.size != 1:
            raise EngineStateError(
                f"backward() needs a scalar loss, got shape {self.shape}")

        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                node._accumulate(grad)
                continue
            input_grads = node.creator.backward(grad)
            for parent, parent_grad in zip(node.creator.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad
            # the tape is single use: free saved buffers
            node.creator = None


class Parameter(Tensor):
    """A named trainable tensor carrying its own Adam moment buffers."""

    def __init__(self, data: ArrayLike, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"

    def cast(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)
        if self.grad is not None:
            self.grad = self.grad.astype(dtype)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """
    Base class for differentiable operations.

    forward() receives the input arrays and returns the output array;
    backward() receives dL/d(output) and returns one gradient per input
    (None for inputs that need none).
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        function = cls(*inputs)
        out = function.forward(*(tensor.data for tensor in inputs), **kwargs)
        _ensure_finite(out, cls.__name__)
        requires_grad = _GRAD_ENABLED and any(tensor.requires_grad for tensor in inputs)
        return Tensor(out, requires_grad=requires_grad,
                      creator=function if requires_grad else None)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- Elementwise and shape plumbing ---

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (_unbroadcast(grad * self.b, self.a.shape),
                _unbroadcast(grad * self.a, self.b.shape))


class Reshape(Function):
    def forward(self, x, shape=None):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([array.shape[axis] for array in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.take(grad, index, axis=self.axis)
                     for index in range(grad.shape[self.axis]))


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Sum):
    def forward(self, x, axis=None, keepdims=False):
        total = super().forward(x, axis=axis, keepdims=keepdims)
        self.count = x.size // max(total.size, 1)
        return total / self.count

    def backward(self, grad):
        return (super().backward(grad)[0] / self.count,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Log(Function):
    def forward(self, x):
        if (x <= 0).any():
            raise NumericError("log of a non-positive value")
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Softmax(Function):
    def forward(self, x, axis=-1):
        _ensure_finite(x, "softmax input")
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class CrossEntropy(Function):
    """Mean of -log(probs[label]) over the batch."""

    def forward(self, probs, labels=None):
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        batch = probs.reshape(-1, probs.shape[-1])
        n_classes = batch.shape[1]
        if labels.size != batch.shape[0]:
            raise ConfigurationError(
                f"cross_entropy got {labels.size} labels for {batch.shape[0]} rows")
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ConfigurationError(f"labels must lie in [0, {n_classes})")
        rows = np.arange(batch.shape[0])
        # float32 softmax can underflow to exactly 0
        picked = np.maximum(batch[rows, labels], np.finfo(batch.dtype).tiny)
        self.cache = (probs.shape, rows, labels, picked)
        return np.asarray(-np.log(picked).mean(), dtype=probs.dtype)

    def backward(self, grad):
        shape, rows, labels, picked = self.cache
        out = np.zeros((rows.size, shape[-1]), dtype=picked.dtype)
        out[rows, labels] = -grad / (rows.size * picked)
        return (out.reshape(shape),)


# --- Layer primitives ---

class Dense(Function):
    """out = x @ W.T + b with W of shape [m, n]."""

    def forward(self, x, weight, bias):
        if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
            raise ConfigurationError(
                f"dense: input width {x.shape[-1]} incompatible with weight "
                f"{weight.shape} / bias {bias.shape}")
        self.vector = x.ndim == 1
        self.x = x.reshape(1, -1) if self.vector else x
        self.weight = weight
        out = self.x @ weight.T + bias
        return out[0] if self.vector else out

    def backward(self, grad):
        grad = grad.reshape(1, -1) if self.vector else grad
        dx = grad @ self.weight
        return (dx[0] if self.vector else dx, grad.T @ self.x, grad.sum(axis=0))


class Conv2d(Function):
    def forward(self, x, kernels, bias, stride=1, padding=0):
        n, channels, height, width = x.shape
        filters, kernel_channels, kh, kw = kernels.shape
        if kernel_channels != channels:
            raise ConfigurationError(
                f"conv2d: input has {channels} channels, kernels expect {kernel_channels}")
        if stride < 1 or kh > height + 2 * padding or kw > width + 2 * padding:
            raise ConfigurationError(
                f"conv2d: kernel {kh}x{kw} (stride {stride}, padding {padding}) "
                f"does not fit input {height}x{width}")
        if bias.shape != (filters,):
            raise ConfigurationError(f"conv2d: bias shape {bias.shape} != ({filters},)")
        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out_h, out_w = windows.shape[2], windows.shape[3]
        self.cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(
            n * out_h * out_w, channels * kh * kw)
        self.kernel_matrix = kernels.reshape(filters, -1)
        self.geometry = (x.shape, kernels.shape, out_h, out_w, stride, padding)
        out = (self.cols @ self.kernel_matrix.T).reshape(n, out_h, out_w, filters)
        return out.transpose(0, 3, 1, 2) + bias[None, :, None, None]

    def backward(self, grad):
        padded_shape, kernel_shape, out_h, out_w, stride, padding = self.geometry
        n, channels, padded_h, padded_w = padded_shape
        filters, _, kh, kw = kernel_shape
        grad_matrix = grad.transpose(0, 2, 3, 1).reshape(-1, filters)
        dkernels = (grad_matrix.T @ self.cols).reshape(kernel_shape)
        dbias = grad.sum(axis=(0, 2, 3))
        dcols = (grad_matrix @ self.kernel_matrix).reshape(n, out_h, out_w, channels, kh, kw)
        dx = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + stride * (out_h - 1) + 1:stride,
                   j:j + stride * (out_w - 1) + 1:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if padding:
            dx = dx[:, :, padding:padded_h - padding, padding:padded_w - padding]
        return dx, dkernels, dbias


class Conv1d(Function):
    def forward(self, x, kernels, bias, stride=1, padding=0):
        n, channels, length = x.shape
        filters, kernel_channels, k = kernels.shape
        if kernel_channels != channels:
            raise ConfigurationError(
                f"conv1d: input has {channels} channels, kernels expect {kernel_channels}")
        if stride < 1 or k > length + 2 * padding:
            raise ConfigurationError(
                f"conv1d: kernel {k} (stride {stride}, padding {padding}) "
                f"does not fit input length {length}")
        if bias.shape != (filters,):
            raise ConfigurationError(f"conv1d: bias shape {bias.shape} != ({filters},)")
        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
        windows = sliding_window_view(x, k, axis=2)[:, :, ::stride]
        out_len = windows.shape[2]
        self.cols = windows.transpose(0, 2, 1, 3).reshape(n * out_len, channels * k)
        self.kernel_matrix = kernels.reshape(filters, -1)
        self.geometry = (x.shape, kernels.shape, out_len, stride, padding)
        out = (self.cols @ self.kernel_matrix.T).reshape(n, out_len, filters)
        return out.transpose(0, 2, 1) + bias[None, :, None]

    def backward(self, grad):
        padded_shape, kernel_shape, out_len, stride, padding = self.geometry
        n, channels, padded_len = padded_shape
        filters, _, k = kernel_shape
        grad_matrix = grad.transpose(0, 2, 1).reshape(-1, filters)
        dkernels = (grad_matrix.T @ self.cols).reshape(kernel_shape)
        dbias = grad.sum(axis=(0, 2))
        dcols = (grad_matrix @ self.kernel_matrix).reshape(n, out_len, channels, k)
        dx = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(k):
            dx[:, :, i:i + stride * (out_len - 1) + 1:stride] += \
                dcols[:, :, :, i].transpose(0, 2, 1)
        if padding:
            dx = dx[:, :, padding:padded_len - padding]
        return dx, dkernels, dbias


class MaxPool2d(Function):
    def forward(self, x, k=2):
        n, channels, height, width = x.shape
        if height % k or width % k:
            raise ConfigurationError(
                f"maxpool2d: input {height}x{width} not divisible by pool factor {k}")
        out_h, out_w = height // k, width // k
        windows = x.reshape(n, channels, out_h, k, out_w, k).transpose(0, 1, 2, 4, 3, 5)
        windows = windows.reshape(n, channels, out_h, out_w, k * k)
        # argmax keeps the first maximum in row-major window order
        self.argmax = windows.argmax(axis=-1)
        self.geometry = (x.shape, k)
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        (n, channels, height, width), k = self.geometry
        routed = np.zeros(grad.shape + (k * k,), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax[..., None], grad[..., None], axis=-1)
        routed = routed.reshape(n, channels, height // k, width // k, k, k)
        return (routed.transpose(0, 1, 2, 4, 3, 5).reshape(n, channels, height, width),)


class MaxPool1d(Function):
    def forward(self, x, k=2):
        n, channels, length = x.shape
        if length % k:
            raise ConfigurationError(
                f"maxpool1d: length {length} not divisible by pool factor {k}")
        windows = x.reshape(n, channels, length // k, k)
        self.argmax = windows.argmax(axis=-1)
        self.geometry = (x.shape, k)
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        shape, k = self.geometry
        routed = np.zeros(grad.shape + (k,), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax[..., None], grad[..., None], axis=-1)
        return (routed.reshape(shape),)


# --- Functional API ---

def add(a, b) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def flatten(x: Tensor) -> Tensor:
    """Collapse everything but the batch axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Transpose.apply(x, axes=tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # pylint: disable=redefined-builtin
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def softmax(scores: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(scores, axis=axis)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    return CrossEntropy.apply(probs, labels=labels)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Dense.apply(x, weight, bias)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution; accepts [C,H,W] (single sample) or [B,C,H,W]."""
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), kernels, bias, stride, padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or kernels.ndim != 4:
        raise ConfigurationError(f"conv2d expects [B,C,H,W] input, got {x.shape}")
    return Conv2d.apply(x, kernels, bias, stride=stride, padding=padding)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution; accepts [C,L] (single sample) or [B,C,L]."""
    if x.ndim == 2:
        out = conv1d(reshape(x, (1,) + x.shape), kernels, bias, stride, padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 3 or kernels.ndim != 3:
        raise ConfigurationError(f"conv1d expects [B,C,L] input, got {x.shape}")
    return Conv1d.apply(x, kernels, bias, stride=stride, padding=padding)


def maxpool2d(x: Tensor, k: int) -> Tensor:
    if x.ndim == 3:
        pooled = MaxPool2d.apply(reshape(x, (1,) + x.shape), k=k)
        return reshape(pooled, pooled.shape[1:])
    return MaxPool2d.apply(x, k=k)


def maxpool1d(x: Tensor, k: int) -> Tensor:
    if x.ndim == 2:
        pooled = MaxPool1d.apply(reshape(x, (1,) + x.shape), k=k)
        return reshape(pooled, pooled.shape[1:])
    return MaxPool1d.apply(x, k=k)


# --- Optimizer ---

def adam_step(params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    params = list(params)
    missing = [param.name for param in params if param.grad is None]
    if missing:
        raise EngineStateError(f"adam_step: no gradient for {', '.join(missing[:5])}")
    for param in params:
        grad = param.grad
        param.step_count += 1
        param.m = beta1 * param.m + (1.0 - beta1) * grad
        param.v = beta2 * param.v + (1.0 - beta2) * grad * grad
        m_hat = param.m / (1.0 - beta1 ** param.step_count)
        v_hat = param.v / (1.0 - beta2 ** param.step_count)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        _ensure_finite(param.data, f"adam_step on {param.name}")
        param.grad = np.zeros_like(param.data)
