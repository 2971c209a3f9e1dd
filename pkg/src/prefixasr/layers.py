"""Shared building blocks: parameter init and multi-head attention."""

from __future__ import annotations

import numpy as np

from .numcore import Tensor, param
from .numcore import ops


def init_weight(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    scale = 1.0 / np.sqrt(d_in)
    return param(rng.uniform(-scale, scale, size=(d_in, d_out)))


def init_bias(d_out: int) -> Tensor:
    return param(np.zeros(d_out))


def init_ones(d_out: int) -> Tensor:
    return param(np.ones(d_out))


def init_conv_weight(rng: np.random.Generator, k: int, d_in: int, d_out: int) -> Tensor:
    scale = 1.0 / np.sqrt(k * d_in)
    return param(rng.uniform(-scale, scale, size=(k, d_in, d_out)))


def init_depthwise_weight(rng: np.random.Generator, k: int, channels: int) -> Tensor:
    scale = 1.0 / np.sqrt(k)
    return param(rng.uniform(-scale, scale, size=(k, channels)))


def init_embedding(rng: np.random.Generator, num: int, dim: int) -> Tensor:
    return param(0.02 * rng.standard_normal((num, dim)))


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    """(T, d) -> (h, T, d/h)."""
    T, d = x.shape
    return x.reshape(T, num_heads, d // num_heads).transpose(1, 0, 2)


def merge_heads(x: Tensor) -> Tensor:
    """(h, T, dh) -> (T, h*dh)."""
    h, T, dh = x.shape
    return x.transpose(1, 0, 2).reshape(T, h * dh)


def attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int,
              mask: np.ndarray | None = None,
              dropout_p: float = 0.0,
              rng: np.random.Generator | None = None) -> Tensor:
    """Scaled dot-product attention over one sequence.

    q: (Tq, d), k/v: (Tk, d). mask is additive (-inf style), shape (Tq, Tk).
    Returns (Tq, d).
    """
    d = q.shape[-1]
    dh = d // num_heads
    qh = split_heads(q, num_heads)
    kh = split_heads(k, num_heads)
    vh = split_heads(v, num_heads)
    scores = (qh @ kh.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = ops.add_mask(scores, mask[None, :, :])
    weights = ops.softmax(scores, axis=-1)
    if dropout_p > 0.0 and rng is not None:
        weights = ops.dropout(weights, dropout_p, rng)
    return merge_heads(weights @ vh)


def causal_mask(size: int, dtype=np.float32) -> np.ndarray:
    mask = np.zeros((size, size), dtype=dtype)
    mask[np.triu_indices(size, k=1)] = -1e9
    return mask
