"""Differentiable layers and losses on NCHW tensors.

Convolutions are lowered to a single matrix product through an im2col view;
the transposed convolution reuses the same two kernels with their roles
swapped, which is what makes the two exact adjoints of each other.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from .tensor import Tensor

BCE_EPS = 1e-7
NORM_EPS = 1e-5


# -- im2col machinery ---------------------------------------------------------

def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x)
    s0, s1, s2, s3 = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, c, kh, kw),
        strides=(s0, s2 * stride, s3 * stride, s1, s2, s3),
        writeable=False,
    )
    return view.reshape(n * ho * wo, c * kh * kw), ho, wo


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], kh: int, kw: int,
            stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def _rows_to_nchw(rows: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(rows.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def _nchw_to_rows(x: np.ndarray) -> np.ndarray:
    return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])


# -- convolutions --------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation. ``w`` has shape (C_out, C_in, kh, kw)."""
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if cin != c:
        raise ValueError(f"conv2d: input has {c} channels, weights expect {cin}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(cout, -1)
    rows = cols @ wmat.T
    if b is not None:
        rows = rows + b.data
    out = _rows_to_nchw(rows, n, ho, wo)

    def backward(g):
        grows = _nchw_to_rows(g)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im(grows @ wmat, x.shape, kh, kw, stride, pad, ho, wo)
        if w.requires_grad:
            gw = (grows.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = grows.sum(axis=0)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution. ``w`` has shape (C_in, C_out, kh, kw).

    Output size is ``(H - 1) * stride - 2 * pad + kh``, so a 4x4 kernel with
    stride 2 and pad 1 exactly doubles the spatial size.
    """
    n, c, h, wd = x.shape
    cin, cout, kh, kw = w.shape
    if cin != c:
        raise ValueError(f"conv_transpose2d: input has {c} channels, weights expect {cin}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (wd - 1) * stride - 2 * pad + kw
    out_shape = (n, cout, ho, wo)
    xrows = _nchw_to_rows(x.data)
    wmat = w.data.reshape(cin, -1)
    out = _col2im(xrows @ wmat, out_shape, kh, kw, stride, pad, h, wd)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, pad)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _rows_to_nchw(gcols @ wmat.T, n, h, wd)
        if w.requires_grad:
            gw = (xrows.T @ gcols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, backward)


# -- normalization ---------------------------------------------------------------

def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    n, c, h, w = x.shape
    if h * w < 2:
        raise ValueError("instance_norm needs at least two spatial positions per channel")
    m = h * w
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g4 = gamma.data.reshape(1, c, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gx = ggamma = gbeta = None
        if x.requires_grad:
            dxhat = g * g4
            s1 = dxhat.sum(axis=(2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
            gx = (inv_std / m) * (m * dxhat - s1 - xhat * s2)
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


# -- activations -------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data).astype(x.dtype, copy=False)
    return Tensor._from_op(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._from_op(np.clip(x.data, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1 - y),))


# -- losses --------------------------------------------------------------------

def _check_same(a_shape, b_shape, what: str) -> None:
    if tuple(a_shape) != tuple(b_shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a_shape)} vs {tuple(b_shape)}")


def bce(pred: Tensor, target) -> Tensor:
    """Binary cross-entropy averaged over all elements.

    ``target`` may be a scalar (broadcast) or an array of the same shape.
    Predictions are clipped to [1e-7, 1 - 1e-7] before the logarithm; the
    gradient is zero where clipping is active.
    """
    t = np.broadcast_to(np.asarray(target, dtype=pred.dtype), pred.shape)
    p_raw = pred.data
    p = np.clip(p_raw, BCE_EPS, 1 - BCE_EPS)
    n = p.size
    val = -np.mean(t * np.log(p) + (1 - t) * np.log1p(-p))

    def backward(g):
        inside = (p_raw >= BCE_EPS) & (p_raw <= 1 - BCE_EPS)
        d = -(t / p - (1 - t) / (1 - p)) / n
        return (g * np.where(inside, d, 0.0).astype(pred.dtype),)

    return Tensor._from_op(np.asarray(val, dtype=pred.dtype), (pred,), backward)


def l1(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a.shape, b.shape, "l1")
    diff = a.data - b.data
    n = diff.size
    sgn = np.sign(diff)

    def backward(g):
        ga = g * sgn / n if a.requires_grad else None
        gb = -g * sgn / n if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(np.asarray(np.abs(diff).mean(), dtype=a.dtype), (a, b), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a.shape, b.shape, "mse")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        ga = g * 2 * diff / n if a.requires_grad else None
        gb = -g * 2 * diff / n if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(np.asarray((diff * diff).mean(), dtype=a.dtype), (a, b), backward)


def total_variation(x: Tensor) -> Tensor:
    """Mean absolute difference between horizontal and vertical neighbours."""
    dx = x[:, :, :, 1:] - x[:, :, :, :-1]
    dy = x[:, :, 1:, :] - x[:, :, :-1, :]
    return dx.abs().mean() + dy.abs().mean()
