"""Video feature encoder and the register-augmented dual-branch video representation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .rng import Rng
from .tensor import Tensor

INF = float("inf")


@dataclass
class VideoFeatures:
    raw: np.ndarray  # (M_raw, d_vid)
    video_id: str


@dataclass
class VideoEmbeddings:
    V_f: Tensor  # (M_f, d)
    V_c: Tensor  # (M_c, d)
    V_v: Tensor | None = None
    video_id: str | None = None
    registers: np.ndarray | None = None


@dataclass
class AttentionGeometry:
    gaussian: np.ndarray
    mask: np.ndarray
    variance: float


def block_variances(n_blocks: int) -> list[float]:
    """2^-2, 2^-1, ..., 2^(n_blocks-3) followed by one infinite-variance block."""
    if n_blocks < 1:
        raise ValueError("need at least one attention block")
    return [2.0 ** e for e in range(-2, n_blocks - 2)][: n_blocks - 1] + [INF]


def gaussian_matrix(M: int, n_registers: int, variance: float) -> np.ndarray:
    """Temporal Gaussian weights on the video-video block; ones wherever a register is involved."""
    if not variance > 0:
        raise ValueError(f"gaussian_matrix: variance must be positive, got {variance}")
    size = M + n_registers
    G = np.ones((size, size))
    if variance != INF:
        idx = np.arange(M)
        G[:M, :M] = np.exp(-((idx[:, None] - idx[None, :]) ** 2) / (2.0 * variance))
    return G


def asymmetric_mask(M: int, n_registers: int, large: float = -T.LARGE_NEGATIVE) -> np.ndarray:
    """Video rows see every token; register rows see only video tokens."""
    size = M + n_registers
    mask = np.zeros((size, size))
    mask[M:, M:] = -large
    return mask


def geometry(M: int, n_registers: int, variance: float) -> AttentionGeometry:
    return AttentionGeometry(gaussian_matrix(M, n_registers, variance), asymmetric_mask(M, n_registers), variance)


# -- parameters -----------------------------------------------------------

def init_encoder_params(rng: Rng, d_vid: int, d: int, dtype=np.float64) -> nn.Params:
    return {"proj": nn.init_linear(rng, d_vid, d, dtype=dtype), "layer": nn.init_encoder_layer(rng, d, dtype=dtype)}


def init_rab_params(rng: Rng, d: int, stack: tuple[int, ...] = (), dtype=np.float64) -> nn.Params:
    return {
        "norm1": nn.init_layer_norm(d, stack, dtype),
        "attn": nn.init_mha(rng, d, stack, dtype),
        "norm2": nn.init_layer_norm(d, stack, dtype),
        "ffn": nn.init_ffn(rng, d, 2 * d, stack, dtype),
    }


def init_branch_params(rng: Rng, d_vid: int, d: int, n_blocks: int, dtype=np.float64) -> nn.Params:
    return {
        "proj": nn.init_linear(rng, d_vid, d, dtype=dtype),
        "blocks": init_rab_params(rng, d, (n_blocks,), dtype),
        "agg": {"logits": nn.param(np.zeros(n_blocks, dtype=dtype))},
    }


def block_slice(stacked: nn.Params, k: int) -> nn.Params:
    """Parameters of the k-th block from a stacked block tree."""
    return nn.map_leaves(stacked, lambda t: t[k])


# -- operations -----------------------------------------------------------

def encode_features(raw, p: nn.Params, heads: int = 4) -> Tensor:
    """Linear projection to d followed by one transformer encoder layer: (M_raw, d)."""
    raw = T.as_tensor(raw, p["proj"]["w"])
    if raw.shape[-2] < 1:
        raise ValueError("encode_features: video has no frames")
    return nn.encoder_layer(nn.linear(raw, p["proj"]), p["layer"], heads)


def gaussian_attention(x: Tensor, geom: AttentionGeometry, p: nn.Params, heads: int = 4,
                       return_weights: bool = False):
    """Multi-head attention with softmax(mask + G * scores) weights."""
    return nn.multi_head_attention(x, p, heads, gauss=geom.gaussian, mask=geom.mask, return_weights=return_weights)


def rab_forward(x: Tensor, gauss: np.ndarray, mask: np.ndarray, p: nn.Params, heads: int) -> Tensor:
    h = x + nn.multi_head_attention(nn.layer_norm(x, p["norm1"]), p["attn"], heads, gauss=gauss, mask=mask)
    return h + nn.ffn(nn.layer_norm(h, p["norm2"]), p["ffn"])


def _concat_registers(V_o: Tensor, r0) -> tuple[Tensor, int]:
    if r0 is None or r0.shape[-2] == 0:
        return V_o, 0
    return T.concat([V_o, T.as_tensor(r0, V_o)], axis=-2), r0.shape[-2]


def rab_block(V_o: Tensor, r0, variance: float, p: nn.Params, heads: int = 4) -> Tensor:
    """One register-augmented attention block; registers are dropped from the output."""
    M = V_o.shape[-2]
    x, n_r = _concat_registers(V_o, r0)
    out = rab_forward(x, gaussian_matrix(M, n_r, variance), asymmetric_mask(M, n_r), p, heads)
    return out[..., :M, :]


def aggregate(outputs: Tensor, p: nn.Params) -> Tensor:
    """Stand-in block aggregator: softmax over learnable per-block logits, weighted sum.

    ``outputs`` is (..., N_a, M, d) with the block axis third from the end.
    """
    weights = T.softmax(p["logits"])
    return (outputs * weights.reshape(-1, 1, 1)).sum(axis=-3)


def dreamprvr_block(V_o: Tensor, r0, p: nn.Params, variances: Sequence[float], heads: int = 4,
                    agg: nn.Params | None = None) -> Tensor:
    """Run one RAB per variance in parallel on the same input and aggregate.

    ``p`` is a stacked block tree whose leading axis indexes ``variances``.
    """
    M = V_o.shape[-2]
    x, n_r = _concat_registers(V_o, r0)
    gauss = np.stack([gaussian_matrix(M, n_r, v) for v in variances])
    out = rab_forward(x, gauss, asymmetric_mask(M, n_r), p, heads)[..., :M, :]
    if agg is None:
        agg = {"logits": Tensor(np.zeros(len(variances), dtype=V_o.dtype))}
    return aggregate(out, agg)


def segment_bounds(n: int, m: int) -> list[tuple[int, int]]:
    """Contiguous near-equal segments; earlier segments take the remainder."""
    base, extra = divmod(n, m)
    bounds, start = [], 0
    for i in range(m):
        stop = start + base + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def pooling_matrix(n: int, m: int) -> np.ndarray:
    A = np.zeros((m, n))
    for i, (lo, hi) in enumerate(segment_bounds(n, m)):
        A[i, lo:hi] = 1.0 / (hi - lo)
    return A


def clip_downsample(V, M_c: int):
    """Mean-pool the rows of ``V`` into ``M_c`` contiguous clips."""
    n = V.shape[-2]
    if not 1 <= M_c <= n:
        raise ValueError(f"clip_downsample: need 1 <= M_c <= {n}, got {M_c}")
    A = pooling_matrix(n, M_c)
    if isinstance(V, Tensor):
        return T.matmul(Tensor(A.astype(V.dtype)), V)
    return A @ np.asarray(V)


def _branch(frames: Tensor, r0, p: nn.Params, variances, heads: int, positional: bool) -> Tensor:
    x = nn.linear(frames, p["proj"])
    if positional:
        x = x + nn.sinusoidal(np.arange(x.shape[-2]), x.shape[-1]).astype(x.dtype)
    return dreamprvr_block(x, r0, p["blocks"], variances, heads, agg=p["agg"])


def dual_branch(raw, r0, params: nn.Params, heads: int = 4, m_clips: int = 32,
                variances: Sequence[float] | None = None, positional: bool = False) -> VideoEmbeddings:
    """Frame- and clip-scale embeddings of one video, both fused with the same registers.

    ``params`` holds ``frame`` and ``clip`` branch trees. The clip count is
    capped at the number of frames.
    """
    raw = T.as_tensor(raw, params["frame"]["proj"]["w"])
    if variances is None:
        variances = block_variances(params["frame"]["agg"]["logits"].shape[0])
    V_f = _branch(raw, r0, params["frame"], variances, heads, positional)
    clips = clip_downsample(raw, min(m_clips, raw.shape[-2]))
    V_c = _branch(clips, r0, params["clip"], variances, heads, positional)
    return VideoEmbeddings(V_f=V_f, V_c=V_c)
