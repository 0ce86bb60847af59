"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects and registers its
gradient rule through :func:`record`.  Broadcasting is limited to bias-style
addition over the last axis; anything else needs an explicit reshape.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, check_shape, record


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    check_shape(a.ndim == 2 and b.ndim == 2, f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    check_shape(a.shape[1] == b.shape[0], f"matmul inner dims differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return record(A @ B, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "hadamard")
    A, B = a.data, b.data
    return record(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x: Tensor, c: float) -> Tensor:
    return record(x.data * c, (x,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast over every axis but the last."""
    check_shape(b.ndim == 1 and x.shape[-1:] == b.shape,
                f"bias of shape {b.shape} does not match last axis of {x.shape}")
    axes = tuple(range(x.ndim - 1))
    return record(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise each row of ``x`` to zero mean and unit variance."""
    X = x.data
    n = X.shape[-1]
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    G = gain.data if gain is not None else 1.0
    out = xhat * G
    if bias is not None:
        out = out + bias.data
    parents = [x] + [t for t in (gain, bias) if t is not None]
    axes = tuple(range(X.ndim - 1))

    def bw(g):
        dxhat = g * G
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=axes))
        if bias is not None:
            grads.append(g.sum(axis=axes))
        return grads

    return record(out, parents, bw)


def _concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty list")
    data = np.concatenate([p.data for p in parts], axis=axis)
    edges = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return np.split(g, edges, axis=axis)

    return record(data, parts, bw)


def concat_last_dim(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, -1)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, 0)


def transpose(x: Tensor) -> Tensor:
    check_shape(x.ndim == 2, f"transpose expects a matrix, got {x.shape}")
    return record(x.data.T.copy(), (x,), lambda g: (g.T,))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                  lambda g: (g.transpose(inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shp = x.shape
    return record(x.data.reshape(tuple(shape)).copy(), (x,), lambda g: (g.reshape(shp),))


def index(x: Tensor, key) -> Tensor:
    """``x[key]`` for basic or advanced indices; repeated indices accumulate."""
    out = np.array(x.data[key], copy=True)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return record(out, (x,), bw)


def mean_pool_tokens(x: Tensor) -> Tensor:
    """Mean over the token (first) axis."""
    T = x.shape[0]
    check_shape(T > 0, "mean_pool_tokens of zero tokens")
    return record(x.data.mean(axis=0), (x,),
                  lambda g: (np.broadcast_to(g / T, x.shape).copy(),))


def sum_all(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum()), (x,),
                  lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return record(np.asarray(x.data.mean()), (x,),
                  lambda g: (np.full(x.shape, float(g) / n),))


def film_modulate(tau: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """``gamma * tau + beta`` with the vectors applied along the last axis."""
    width = tau.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"film widths differ: tau {tau.shape}, gamma {gamma.shape}, beta {beta.shape}")
    T, G = tau.data, gamma.data
    axes = tuple(range(tau.ndim - 1))

    def bw(g):
        return g * G, (g * T).sum(axis=axes), g.sum(axis=axes)

    return record(T * G + beta.data, (tau, gamma, beta), bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int | None = None) -> Tensor:
    """Cross-correlation of ``x`` (C_in, L) with ``w`` (C_out, C_in, K).

    ``padding`` defaults to ``K // 2`` (length-preserving for odd K).
    """
    check_shape(x.ndim == 2 and w.ndim == 3, f"conv1d shapes {x.shape}, {w.shape}")
    c_in, L = x.shape
    c_out, wc, K = w.shape
    check_shape(wc == c_in, f"conv1d channel mismatch: input {c_in}, kernel {wc}")
    pad = K // 2 if padding is None else int(padding)
    Lp = L + 2 * pad
    if K > Lp:
        raise ShapeError(f"conv1d kernel {K} larger than padded input {Lp}")
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    win = sliding_window_view(xp, K, axis=1)[:, ::stride]      # (C_in, L', K)
    Lo = win.shape[1]
    cols = win.transpose(0, 2, 1).reshape(c_in * K, Lo)
    W2 = w.data.reshape(c_out, c_in * K)
    out = W2 @ cols
    if b is not None:
        out = out + b.data[:, None]
    parents = [x, w] + ([b] if b is not None else [])

    def bw(g):
        gx = None
        if x.requires_grad:
            dcols = (W2.T @ g).reshape(c_in, K, Lo)
            dxp = np.zeros((c_in, Lp))
            for k in range(K):
                dxp[:, k:k + stride * Lo:stride] += dcols[:, k, :]
            gx = dxp[:, pad:pad + L]
        grads = [gx, (g @ cols.T).reshape(w.shape)]
        if b is not None:
            grads.append(g.sum(axis=1))
        return grads

    return record(out, parents, bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int | None = None) -> Tensor:
    """2-D counterpart of :func:`conv1d`: ``x`` (C, H, W), ``w`` (C_out, C, Kh, Kw)."""
    check_shape(x.ndim == 3 and w.ndim == 4, f"conv2d shapes {x.shape}, {w.shape}")
    c_in, H, W = x.shape
    c_out, wc, kh, kw = w.shape
    check_shape(wc == c_in, f"conv2d channel mismatch: input {c_in}, kernel {wc}")
    ph = kh // 2 if padding is None else int(padding)
    pw = kw // 2 if padding is None else int(padding)
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d kernel {(kh, kw)} larger than padded input {(Hp, Wp)}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, Ho * Wo)
    W2 = w.data.reshape(c_out, -1)
    out = W2 @ cols
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(c_out, Ho, Wo)
    parents = [x, w] + ([b] if b is not None else [])

    def bw(g):
        g2 = g.reshape(c_out, Ho * Wo)
        gx = None
        if x.requires_grad:
            dcols = (W2.T @ g2).reshape(c_in, kh, kw, Ho, Wo)
            dxp = np.zeros((c_in, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j]
            gx = dxp[:, ph:ph + H, pw:pw + W]
        grads = [gx, (g2 @ cols.T).reshape(w.shape)]
        if b is not None:
            grads.append(g2.sum(axis=1))
        return grads

    return record(out, parents, bw)
