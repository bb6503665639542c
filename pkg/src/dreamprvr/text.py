"""Query encoder, textual-space losses and the textual perturbation sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from . import nn
from . import tensor as T
from .rng import Rng
from .tensor import Tensor


@dataclass
class QueryTokens:
    features: np.ndarray  # (N_q, d_text)
    video_id: str
    query_id: str


@dataclass
class QueryEmbedding:
    q: Tensor  # (d,)
    video_id: str
    query_id: str


@dataclass
class TpsTarget:
    q_hat: np.ndarray  # (N_r, d)
    source_video_id: str | None = None


def init_text_params(rng: Rng, d_text: int, d: int, dtype=np.float64) -> nn.Params:
    return {
        "proj": nn.init_linear(rng, d_text, d, dtype=dtype),
        "encoder": nn.init_encoder_layer(rng, d, dtype=dtype),
        "pool_u": nn.param(rng.normal((1, d), std=1.0 / np.sqrt(d), dtype=dtype)),
    }


def _encode_tokens(features: Tensor, p: nn.Params, heads: int) -> Tensor:
    """(..., N_q, d_text) -> (..., d) via projection, one encoder layer and attention pooling."""
    tokens = nn.encoder_layer(nn.linear(features, p["proj"]), p["encoder"], heads)
    weights = T.softmax(T.matmul(p["pool_u"], tokens.T), axis=-1)  # (..., 1, N_q)
    pooled = T.matmul(weights, tokens)
    return pooled.reshape(*pooled.shape[:-2], pooled.shape[-1])


def encode_query(tokens: QueryTokens, params: nn.Params, heads: int = 4) -> QueryEmbedding:
    features = np.asarray(tokens.features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError(f"encode_query: query {tokens.query_id!r} has no word features (shape {features.shape})")
    dtype = params["pool_u"].dtype
    q = _encode_tokens(Tensor(features.astype(dtype, copy=False)), params, heads)
    return QueryEmbedding(q=q, video_id=tokens.video_id, query_id=tokens.query_id)


def encode_queries(features: Sequence[np.ndarray], params: nn.Params, heads: int = 4) -> Tensor:
    """Encode a batch of word-feature matrices into a (B, d) tensor.

    Queries of equal length are stacked and encoded together; rows come back
    in input order.
    """
    dtype = params["pool_u"].dtype
    groups: dict[int, list[int]] = {}
    for i, f in enumerate(features):
        if len(f) == 0:
            raise ValueError(f"encode_queries: query {i} has no word features")
        groups.setdefault(len(f), []).append(i)
    parts, order = [], []
    for length in sorted(groups):
        idx = groups[length]
        stacked = np.stack([features[i] for i in idx]).astype(dtype, copy=False)
        parts.append(_encode_tokens(Tensor(stacked), params, heads))
        order.extend(idx)
    out = T.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    if order != sorted(order):
        out = out[np.argsort(order)]
    return out


# -- textual semantic structure learning --------------------------------------

def loss_qsp(q: Tensor, video_ids: Sequence[Hashable], tau: float = 0.1) -> Tensor:
    """Query similarity preservation loss over a (B, d) batch.

    Same-video queries are positives, every other in-batch query (anchor
    excluded) sits in the denominator. Anchors without a positive are left
    out of the mean.
    """
    if tau <= 0:
        raise ValueError(f"loss_qsp: temperature must be positive, got {tau}")
    ids = np.asarray([str(v) for v in video_ids])
    n = len(ids)
    if n < 2:
        raise ValueError("loss_qsp: need at least two queries")
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    n_pos = same.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        return Tensor(np.zeros((), dtype=q.dtype))
    logits = T.cosine_matrix(q, q) / tau + np.where(np.eye(n, dtype=bool), T.LARGE_NEGATIVE, 0.0)
    log_prob = logits - T.logsumexp(logits, axis=-1, keepdims=True)
    weights = np.where(same, 1.0 / np.maximum(n_pos, 1)[:, None], 0.0) / valid.sum()
    return -(log_prob * weights.astype(q.dtype)).sum()


def loss_div(q: Tensor, delta: float = 0.2, omega: float = 5.0) -> Tensor:
    """Query diversity loss for the (M_q, d) queries of one video: the mean over query pairs of
    (1 + cos) * softplus(omega * (cos + delta))."""
    m = q.shape[0]
    if m <= 1:
        return Tensor(np.zeros((), dtype=q.dtype))
    iu, ju = np.triu_indices(m, k=1)
    cos = T.cosine_matrix(q, q)[iu, ju]
    pair = (cos + 1.0) * T.softplus((cos + delta) * omega)
    return pair.sum() * (2.0 / (m * (m - 1)))


def loss_div_batch(q: Tensor, video_ids: Sequence[Hashable], delta: float = 0.2, omega: float = 5.0) -> Tensor:
    """Diversity loss averaged over the distinct videos present in the batch."""
    ids = [str(v) for v in video_ids]
    videos = list(dict.fromkeys(ids))
    total = None
    for vid in videos:
        rows = [i for i, v in enumerate(ids) if v == vid]
        if len(rows) < 2:
            continue
        term = loss_div(q[rows], delta, omega)
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros((), dtype=q.dtype))
    return total / len(videos)


def loss_tssl(q: Tensor, video_ids: Sequence[Hashable], lambda_d: float = 1.0, lambda_q: float = 0.5,
              tau: float = 0.1, delta: float = 0.2, omega: float = 5.0) -> Tensor:
    if lambda_d < 0 or lambda_q < 0:
        raise ValueError("loss_tssl: weights must be non-negative")
    total = Tensor(np.zeros((), dtype=q.dtype))
    if lambda_d:
        total = total + loss_div_batch(q, video_ids, delta, omega) * lambda_d
    if lambda_q:
        total = total + loss_qsp(q, video_ids, tau) * lambda_q
    return total


# -- textual perturbation sampler -------------------------------------------

def whiten(q_mean: np.ndarray, eps: float = 1e-6) -> tuple[np.ndarray, float, float]:
    """Return (whitened vector, scalar mean, scalar std) of a single vector."""
    mu = float(q_mean.mean())
    sigma = float(q_mean.std())
    return (q_mean - mu) / max(sigma, eps), mu, sigma


def tps_sample(video_queries, gamma: float, n_registers: int, rng: Rng,
               independent: bool = True, video_id: str | None = None) -> TpsTarget:
    """Draw ``n_registers`` perturbed whitened copies of a video's mean query.

    Each row is ``alpha * q_bar + beta`` with ``alpha ~ N(1, (gamma*sigma)^2)``
    and ``beta ~ N(mu, (gamma*sigma)^2)`` drawn per coordinate. With
    ``independent=False`` one draw is tiled across all rows.
    """
    if isinstance(video_queries, Tensor):
        arr = video_queries.data
    elif isinstance(video_queries, (list, tuple)) and video_queries and isinstance(video_queries[0], QueryEmbedding):
        arr = np.stack([e.q.data for e in video_queries])
        video_id = video_id or video_queries[0].video_id
    else:
        arr = np.asarray(video_queries, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.shape[0] == 0:
        raise ValueError("tps_sample: the video has no queries")
    if gamma < 0:
        raise ValueError(f"tps_sample: perturbation scale must be non-negative, got {gamma}")
    q_bar, mu, sigma = whiten(arr.mean(axis=0))
    d = q_bar.shape[0]
    rows = n_registers if independent else 1
    if gamma == 0:
        q_hat = np.broadcast_to(q_bar + mu, (rows, d)).copy()
    else:
        spread = gamma * sigma
        alpha = rng.normal((rows, d), mean=1.0, std=spread)
        beta = rng.normal((rows, d), mean=mu, std=spread)
        q_hat = alpha * q_bar + beta
    if not independent:
        q_hat = np.repeat(q_hat, n_registers, axis=0)
    return TpsTarget(q_hat=q_hat.astype(arr.dtype, copy=False), source_video_id=video_id)
