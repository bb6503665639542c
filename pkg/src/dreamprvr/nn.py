"""Parameter trees and the small layers shared by the text and video encoders.

Parameters live in nested dicts of leaf :class:`Tensor` objects; layer
functions take the sub-dict they own. Leading "stack" axes on weights
broadcast through ``matmul`` so several parallel blocks can share one call.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor

Params = dict


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def init_linear(rng: Rng, d_in: int, d_out: int, stack: tuple[int, ...] = (), dtype=np.float64) -> Params:
    bound = np.sqrt(6.0 / (d_in + d_out))
    return {
        "w": param(rng.uniform(stack + (d_in, d_out), -bound, bound, dtype=dtype)),
        "b": param(np.zeros(stack + (1, d_out), dtype=dtype)),
    }


def init_layer_norm(d: int, stack: tuple[int, ...] = (), dtype=np.float64) -> Params:
    return {"g": param(np.ones(stack + (1, d), dtype=dtype)), "b": param(np.zeros(stack + (1, d), dtype=dtype))}


def linear(x: Tensor, p: Params) -> Tensor:
    return T.matmul(x, p["w"]) + p["b"]


def layer_norm(x: Tensor, p: Params) -> Tensor:
    return T.layer_norm(x, p["g"], p["b"])


def flatten(params: Params, prefix: str = "") -> dict[str, Tensor]:
    flat: dict[str, Tensor] = {}
    for key in sorted(params):
        value = params[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def iter_leaves(params: Params) -> Iterator[Tensor]:
    yield from flatten(params).values()


def map_leaves(params: Params, fn) -> Params:
    return {k: map_leaves(v, fn) if isinstance(v, dict) else fn(v) for k, v in params.items()}


def detached(params: Params) -> Params:
    """Same values without gradient tracking, for read-only inference."""
    return map_leaves(params, lambda t: Tensor(t.data))


def count(params: Params) -> int:
    return sum(t.size for t in iter_leaves(params))


# -- multi-head attention and the standard encoder layer ----------------------

def init_mha(rng: Rng, d: int, stack: tuple[int, ...] = (), dtype=np.float64) -> Params:
    return {"qkv": init_linear(rng, d, 3 * d, stack, dtype), "out": init_linear(rng, d, d, stack, dtype)}


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., L, d) -> (..., heads, L, d / heads)."""
    *lead, length, d = x.shape
    if d % heads:
        raise T.ShapeError(f"split_heads: width {d} is not divisible by {heads} heads")
    x = x.reshape(*lead, length, heads, d // heads)
    n = len(lead)
    return x.transpose(*range(n), n + 1, n, n + 2)


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dh = x.shape
    n = len(lead)
    return x.transpose(*range(n), n + 1, n, n + 2).reshape(*lead, length, heads * dh)


def multi_head_attention(x: Tensor, p: Params, heads: int, gauss=None, mask=None, return_weights: bool = False):
    """Self-attention with optional multiplicative Gaussian modulation and additive mask.

    ``gauss`` and ``mask`` have shape (..., L, L) and are shared by all heads.
    """
    d = x.shape[-1]
    if d % heads:
        raise T.ShapeError(f"multi_head_attention: width {d} is not divisible by {heads} heads")
    qkv = linear(x, p["qkv"])
    q, k, v = (split_heads(qkv[..., i * d:(i + 1) * d], heads) for i in range(3))
    if gauss is not None:
        gauss = np.expand_dims(gauss, -3)
    if mask is not None:
        mask = np.expand_dims(mask, -3)
    ctx, weights = T.attention(q, k, v, gauss=gauss, mask=mask, return_weights=True)
    out = linear(merge_heads(ctx), p["out"])
    return (out, weights) if return_weights else out


def init_ffn(rng: Rng, d: int, hidden: int, stack: tuple[int, ...] = (), dtype=np.float64) -> Params:
    return {"fc1": init_linear(rng, d, hidden, stack, dtype), "fc2": init_linear(rng, hidden, d, stack, dtype)}


def ffn(x: Tensor, p: Params) -> Tensor:
    return linear(T.gelu(linear(x, p["fc1"])), p["fc2"])


def init_encoder_layer(rng: Rng, d: int, dtype=np.float64) -> Params:
    return {
        "attn": init_mha(rng, d, dtype=dtype),
        "norm1": init_layer_norm(d, dtype=dtype),
        "ffn": init_ffn(rng, d, 2 * d, dtype=dtype),
        "norm2": init_layer_norm(d, dtype=dtype),
    }


def encoder_layer(x: Tensor, p: Params, heads: int, mask=None) -> Tensor:
    """Post-norm transformer encoder layer (self-attention, feed-forward, residuals)."""
    x = layer_norm(x + multi_head_attention(x, p["attn"], heads, mask=mask), p["norm1"])
    return layer_norm(x + ffn(x, p["ffn"]), p["norm2"])


def sinusoidal(positions, d: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of ``positions`` (any shape) into ``d`` channels."""
    positions = np.asarray(positions, dtype=np.float64)[..., None]
    half = (d + 1) // 2
    freqs = base ** (-np.arange(half) * 2.0 / d)
    angles = positions * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    return emb[..., :d]
