"""Differentiable primitives over :class:`~prefixasr.numcore.tensor.Tensor`.

Broadcasting is limited to scalars and trailing-dim bias adds; batched matmul
requires identical leading dims. Softmax/log-sum-exp are max-subtracted and
safe for inputs up to magnitude 1e4.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError, as_tensor, make


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    """Coerce plain scalars to the tensor operand's dtype to avoid upcasts."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g):
        return [(a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape))]

    return make(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return [(a, _unbroadcast(g / b.data, a.data.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))]

    return make(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim > 2 or b.data.ndim > 2:
        if a.data.shape[:-2] != b.data.shape[:-2]:
            raise ShapeError(f"batched matmul dims differ: {a.shape} vs {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return [(a, ga.reshape(a.data.shape)), (b, gb.reshape(b.data.shape))]

    return make(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return [(a, g.reshape(a.data.shape))]

    return make(out, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return [(a, np.transpose(g, inv))]

    return make(out, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return list(zip(tensors, pieces))

    return make(out, tuple(tensors), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return [(a, full)]

    return make(out, (a,), backward)


def sum_(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.data.shape).copy())]
        return [(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())]

    return make(out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return [(a, np.broadcast_to(g / n, a.data.shape).copy())]
        return [(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy())]

    return make(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return [(a, g * out)]

    return make(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        return [(a, g / a.data)]

    return make(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        return [(a, g * 0.5 / out)]

    return make(out, (a,), backward)


def pow_(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def backward(g):
        return [(a, g * p * a.data ** (p - 1))]

    return make(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return [(a, g * (1.0 - out * out))]

    return make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return [(a, g * out * (1.0 - out))]

    return make(out, (a,), backward)


def swish(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def backward(g):
        return [(a, g * (sig + a.data * sig * (1.0 - sig)))]

    return make(out, (a,), backward)


def glu(a: Tensor, axis: int = -1) -> Tensor:
    """Halve `axis`; first half gated by sigmoid of the second."""
    n = a.data.shape[axis]
    if n % 2 != 0:
        raise ShapeError(f"GLU axis size {n} not even")
    x, gate = np.split(a.data, 2, axis=axis)
    sig = 1.0 / (1.0 + np.exp(-gate))
    out = x * sig

    def backward(g):
        gx = g * sig
        ggate = g * x * sig * (1.0 - sig)
        return [(a, np.concatenate([gx, ggate], axis=axis))]

    return make(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [(a, (g - dot) * out)]

    return make(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return [(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))]

    return make(out, (a,), backward)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m).sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def backward(g):
        soft = np.exp(a.data - m) / s
        return [(a, np.expand_dims(g, axis) * soft)]

    return make(out, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        d = x.data.shape[-1]
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.data.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        return [(x, dx), (gain, dgain), (bias, dbias)]

    return make(out, (x, gain, bias), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return [(table, gt)]

    return make(out, (table,), backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick x[i, idx[i]] along the last axis of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return [(x, gx)]

    return make(out, (x,), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Time convolution: x (T, Cin), w (k, Cin, Cout), b (Cout,)."""
    k = w.data.shape[0]
    T = x.data.shape[0]
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    To = (T + 2 * pad - k) // stride + 1
    out = np.broadcast_to(b.data, (To, w.data.shape[2])).copy()
    offsets = [j + stride * np.arange(To) for j in range(k)]
    for j in range(k):
        out += xp[offsets[j]] @ w.data[j]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for j in range(k):
            gw[j] = xp[offsets[j]].T @ g
            np.add.at(gxp, offsets[j], g @ w.data[j].T)
        gx = gxp[pad:pad + T] if pad else gxp
        return [(x, gx), (w, gw), (b, g.sum(axis=0))]

    return make(out, (x, w, b), backward)


def depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor, pad: int = 0) -> Tensor:
    """Per-channel time convolution: x (T, C), w (k, C), b (C,). Stride 1."""
    k = w.data.shape[0]
    T = x.data.shape[0]
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    To = T + 2 * pad - k + 1
    out = np.broadcast_to(b.data, (To, x.data.shape[1])).copy()
    for j in range(k):
        out += xp[j:j + To] * w.data[j]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for j in range(k):
            gw[j] = (xp[j:j + To] * g).sum(axis=0)
            gxp[j:j + To] += g * w.data[j]
        gx = gxp[pad:pad + T] if pad else gxp
        return [(x, gx), (w, gw), (b, g.sum(axis=0))]

    return make(out, (x, w, b), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = x.data * keep

    def backward(g):
        return [(x, g * keep)]

    return make(out, (x,), backward)


def add_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Add a constant (non-differentiated) mask, e.g. -1e9 at banned positions."""
    out = x.data + mask

    def backward(g):
        return [(x, g)]

    return make(out, (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y
