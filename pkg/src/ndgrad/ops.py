"""Elementwise, reduction, shape and contraction ops with their backward rules."""
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from src.ndgrad.errors import ShapeError
from src.ndgrad.tensor import Function, Tensor, as_tensor


def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the dimensions numpy broadcasting added or stretched."""
    if grad.shape == to_shape:
        return grad
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(to_shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape], "not broadcastable") from None


def _normalize_axis(axis: Any, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


# binary arithmetic

class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        _check_broadcast(self.name, a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        grad_a = grad / self.b
        grad_b = -grad * self.a / (self.b * self.b)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b.shape)


# unary

class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Power(Function):
    name = "power"

    def __init__(self, exponent: float):
        self.exponent = float(exponent)

    def forward(self, a):
        self.a = a
        return np.power(a, self.exponent)

    def backward(self, grad):
        return (grad * self.exponent * np.power(self.a, self.exponent - 1.0),)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    name = "log"

    def forward(self, a):
        self.a = a
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Abs(Function):
    name = "abs"

    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class Relu(Function):
    name = "relu"

    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyRelu(Function):
    name = "leaky_relu"

    def __init__(self, slope: float = 0.01):
        self.slope = slope

    def forward(self, a):
        self.scale = np.where(a > 0, 1.0, self.slope)
        return a * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = stable_sigmoid(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Softplus(Function):
    """log(1 + e^x), evaluated without overflow."""

    name = "softplus"

    def forward(self, a):
        self.a = a
        return np.logaddexp(0.0, a)

    def backward(self, grad):
        return (grad * stable_sigmoid(self.a),)


class LogSoftmax(Function):
    name = "log_softmax"

    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, a):
        shifted = a - np.max(a, axis=self.axis, keepdims=True)
        self.out = shifted - np.log(np.sum(np.exp(shifted), axis=self.axis, keepdims=True))
        return self.out

    def backward(self, grad):
        softmax = np.exp(self.out)
        return (grad - softmax * np.sum(grad, axis=self.axis, keepdims=True),)


class Softmax(Function):
    name = "softmax"

    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, a):
        shifted = np.exp(a - np.max(a, axis=self.axis, keepdims=True))
        self.out = shifted / np.sum(shifted, axis=self.axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


# reductions and shape

class Sum(Function):
    name = "sum"

    def __init__(self, axis: Any = None, keepdims: bool = False):
        self.axis = axis
        self.keepdims = keepdims

    def forward(self, a):
        self.in_shape = a.shape
        self.axes = _normalize_axis(self.axis, a.ndim)
        return np.sum(a, axis=self.axes, keepdims=self.keepdims)

    def backward(self, grad):
        grad = np.asarray(grad)
        if self.axes is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Reshape(Function):
    name = "reshape"

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)

    def forward(self, a):
        self.in_shape = a.shape
        try:
            return a.reshape(self.shape)
        except ValueError:
            raise ShapeError(self.name, [a.shape, self.shape]) from None

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    name = "transpose"

    def __init__(self, axes: Optional[Sequence[int]] = None):
        self.axes = tuple(axes) if axes is not None else None

    def forward(self, a):
        self.axes = self.axes or tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Index(Function):
    name = "index"

    def __init__(self, index: Any):
        self.index = index

    def forward(self, a):
        self.in_shape = a.shape
        try:
            return a[self.index]
        except IndexError as e:
            raise ShapeError(self.name, [a.shape], str(e)) from None

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    name = "concat"

    def __init__(self, axis: int = 0):
        self.axis = axis

    def forward(self, *arrays):
        try:
            out = np.concatenate(arrays, axis=self.axis)
        except ValueError:
            raise ShapeError(self.name, [a.shape for a in arrays]) from None
        self.splits = np.cumsum([a.shape[self.axis] for a in arrays])[:-1]
        return out

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(self.name, [a.shape, b.shape], "inner dimensions must match")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class GroupedLinear(Function):
    """
    k independent affine maps evaluated together.

    x has shape (batch, k, in) and w has shape (k, in, out); group j only ever
    sees x[:, j, :] and w[j], so outputs of different groups never mix.
    """

    name = "grouped_linear"

    def forward(self, x, w):
        if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0] or x.shape[2] != w.shape[1]:
            raise ShapeError(self.name, [x.shape, w.shape], "expected (B,k,i) and (k,i,o)")
        self.x, self.w = x, w
        return np.einsum("bki,kio->bko", x, w)

    def backward(self, grad):
        grad_x = np.einsum("bko,kio->bki", grad, self.w)
        grad_w = np.einsum("bki,bko->kio", self.x, grad)
        return grad_x, grad_w


# functional API

def add(a: Any, b: Any) -> Tensor:
    return Add.apply(a, b)


def sub(a: Any, b: Any) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Any, b: Any) -> Tensor:
    return Mul.apply(a, b)


def div(a: Any, b: Any) -> Tensor:
    return Div.apply(a, b)


def neg(a: Any) -> Tensor:
    return Neg.apply(a)


def power(a: Any, exponent: float) -> Tensor:
    return Power.apply(a, exponent=exponent)


def exp(a: Any) -> Tensor:
    return Exp.apply(a)


def log(a: Any) -> Tensor:
    return Log.apply(a)


def absolute(a: Any) -> Tensor:
    return Abs.apply(a)


def relu(a: Any) -> Tensor:
    return Relu.apply(a)


def leaky_relu(a: Any, slope: float = 0.01) -> Tensor:
    return LeakyRelu.apply(a, slope=slope)


def sigmoid(a: Any) -> Tensor:
    return Sigmoid.apply(a)


def softplus(a: Any) -> Tensor:
    return Softplus.apply(a)


def log_softmax(a: Any, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(a, axis=axis)


def softmax(a: Any, axis: int = -1) -> Tensor:
    return Softmax.apply(a, axis=axis)


def reduce_sum(a: Any, axis: Any = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def reduce_mean(a: Any, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return Sum.apply(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Any, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=shape)


def transpose(a: Any, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=axes)


def index(a: Any, idx: Any) -> Tensor:
    return Index.apply(a, index=idx)


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def matmul(a: Any, b: Any) -> Tensor:
    return MatMul.apply(a, b)


def linear(x: Any, weight: Any, bias: Any = None) -> Tensor:
    """x @ weight (+ bias) with weight laid out (in, out)."""
    out = MatMul.apply(x, weight)
    return out + bias if bias is not None else out


def grouped_linear(x: Any, weight: Any, bias: Any = None) -> Tensor:
    out = GroupedLinear.apply(x, weight)
    return out + bias if bias is not None else out
