"""Strided 2-D convolution and its transpose, NCHW layout, im2col via strided views."""
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.ndgrad.errors import ShapeError
from src.ndgrad.tensor import Function, Tensor


class Conv2d(Function):
    """
    Cross-correlation of x (N, C, H, W) with w (O, C, kh, kw).

    Output spatial size is (H + 2p - kh) // s + 1; with kernel 3, stride 2 and
    padding 1 an even input halves exactly.
    """

    name = "conv2d"

    def __init__(self, stride: int = 2, padding: int = 1):
        self.stride = stride
        self.padding = padding

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(self.name, [x.shape, w.shape], "expected (N,C,H,W) and (O,C,kh,kw)")
        s, p = self.stride, self.padding
        kh, kw = w.shape[2], w.shape[3]
        if x.shape[2] + 2 * p < kh or x.shape[3] + 2 * p < kw:
            raise ShapeError(self.name, [x.shape, w.shape], "kernel larger than padded input")

        self.x_shape = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        self.padded_shape = padded.shape
        # (N, C, Ho, Wo, kh, kw)
        self.windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        self.w = w
        out = np.tensordot(self.windows, w, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad):
        s, p = self.stride, self.padding
        _, _, h_out, w_out = grad.shape
        kh, kw = self.w.shape[2], self.w.shape[3]

        grad_w = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))

        grad_padded = np.zeros(self.padded_shape)
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(grad, self.w[:, :, i, j], axes=([1], [0]))
                grad_padded[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += contribution.transpose(0, 3, 1, 2)
        h, w = self.x_shape[2], self.x_shape[3]
        grad_x = grad_padded[:, :, p:p + h, p:p + w]
        return grad_x, grad_w


class ConvTranspose2d(Function):
    """
    Transposed convolution of x (N, Cin, H, W) with w (Cin, Cout, kh, kw).

    Output spatial size is (H - 1) * s - 2p + kh + output_padding; kernel 3,
    stride 2, padding 1 and output padding 1 double the input exactly.
    """

    name = "conv_transpose2d"

    def __init__(self, stride: int = 2, padding: int = 1, output_padding: int = 1):
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def _sizes(self, h: int, w: int, kh: int, kw: int):
        s, p, op = self.stride, self.padding, self.output_padding
        full = ((h - 1) * s + kh + op, (w - 1) * s + kw + op)
        out = ((h - 1) * s - 2 * p + kh + op, (w - 1) * s - 2 * p + kw + op)
        return full, out

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
            raise ShapeError(self.name, [x.shape, w.shape], "expected (N,Cin,H,W) and (Cin,Cout,kh,kw)")
        n, _, h, wd = x.shape
        kh, kw = w.shape[2], w.shape[3]
        (hf, wf), (ho, wo) = self._sizes(h, wd, kh, kw)
        if ho <= 0 or wo <= 0:
            raise ShapeError(self.name, [x.shape, w.shape], "non-positive output size")
        s, p = self.stride, self.padding

        self.x, self.w = x, w
        self.full_shape = (n, w.shape[1], hf, wf)
        self.out_hw = (ho, wo)
        full = np.zeros(self.full_shape)
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(x, w[:, :, i, j], axes=([1], [0]))
                full[:, :, i:i + s * h:s, j:j + s * wd:s] += contribution.transpose(0, 3, 1, 2)
        return full[:, :, p:p + ho, p:p + wo]

    def backward(self, grad):
        s, p = self.stride, self.padding
        _, _, h, wd = self.x.shape
        kh, kw = self.w.shape[2], self.w.shape[3]
        ho, wo = self.out_hw

        grad_full = np.zeros(self.full_shape)
        grad_full[:, :, p:p + ho, p:p + wo] = grad

        grad_x = np.zeros(self.x.shape)
        grad_w = np.zeros(self.w.shape)
        for i in range(kh):
            for j in range(kw):
                window = grad_full[:, :, i:i + s * h:s, j:j + s * wd:s]
                grad_x += np.tensordot(window, self.w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                grad_w[:, :, i, j] = np.tensordot(self.x, window, axes=([0, 2, 3], [0, 2, 3]))
        return grad_x, grad_w


def conv2d(x: Any, weight: Any, bias: Any = None, stride: int = 2, padding: int = 1) -> Tensor:
    out = Conv2d.apply(x, weight, stride=stride, padding=padding)
    if bias is not None:
        out = out + bias.reshape((1, -1, 1, 1))
    return out


def conv_transpose2d(x: Any, weight: Any, bias: Any = None, stride: int = 2, padding: int = 1,
                     output_padding: int = 1) -> Tensor:
    out = ConvTranspose2d.apply(x, weight, stride=stride, padding=padding, output_padding=output_padding)
    if bias is not None:
        out = out + bias.reshape((1, -1, 1, 1))
    return out
