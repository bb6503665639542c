"""The full retrieval model: parameter layout, batched forward pass and corpus embedding.

Videos of different lengths are padded to a common length and processed in
one pass. Padded positions are hidden from every attention as keys and are
dropped before pooling and scoring, so each video's result matches the
per-video functions in :mod:`dreamprvr.video` and :mod:`dreamprvr.diffusion`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffusion as D
from . import nn
from . import objectives as O
from . import tensor as T
from . import text as X
from . import video as V
from .config import RunConfig
from .rng import Rng
from .tensor import Tensor

QUERY_CHUNK = 256
VIDEO_CHUNK = 64


def model_dtype(cfg: RunConfig) -> np.dtype:
    return np.dtype(cfg.train.precision)


def init_model(cfg: RunConfig, d_vid: int, d_text: int) -> nn.Params:
    """Every parameter tree the configuration can use, seeded from ``train.seed``.

    Sub-trees a variant does not use are still created (and simply receive no
    gradient), so all variants share one checkpoint layout.
    """
    rng = Rng(cfg.train.seed, (100,))
    dtype = model_dtype(cfg)
    m = cfg.model
    d, n_r = m.d, max(m.n_registers, 1)
    return {
        "text": X.init_text_params(rng.spawn(1), d_text, d, dtype),
        "video": V.init_encoder_params(rng.spawn(2), d_vid, d, dtype),
        "frame": V.init_branch_params(rng.spawn(3), d_vid, d, m.n_blocks, dtype),
        "clip": V.init_branch_params(rng.spawn(4), d_vid, d, m.n_blocks, dtype),
        "pvs": D.init_pvs_params(rng.spawn(5), d, dtype),
        "cond": D.init_condition_params(rng.spawn(6), d, n_r, dtype),
        "dre": D.init_dre_params(rng.spawn(7), d, cfg.diffusion.dre_blocks, dtype),
        "onestep": nn.init_linear(rng.spawn(8), d, d, dtype=dtype),
    }


# -- padding ------------------------------------------------------------------

@dataclass
class PaddedVideos:
    raw: np.ndarray  # (B, L, d_vid)
    lengths: np.ndarray  # (B,)
    video_ids: list[str]

    @property
    def width(self) -> int:
        return self.raw.shape[1]


def pad_videos(videos: Sequence[V.VideoFeatures], dtype=np.float64) -> PaddedVideos:
    lengths = np.array([v.raw.shape[0] for v in videos], dtype=np.intp)
    if len(videos) == 0 or lengths.min() < 1:
        raise ValueError("pad_videos: need at least one video, each with at least one frame")
    raw = np.zeros((len(videos), lengths.max(), videos[0].raw.shape[1]), dtype=dtype)
    for i, v in enumerate(videos):
        raw[i, : lengths[i]] = v.raw
    return PaddedVideos(raw=raw, lengths=lengths, video_ids=[v.video_id for v in videos])


def key_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    """(B, 1, width) additive mask hiding padded key positions."""
    pad = np.arange(width)[None, :] >= lengths[:, None]
    return np.where(pad, T.LARGE_NEGATIVE, 0.0)[:, None, :]


def register_mask(lengths: np.ndarray, width: int, n_registers: int) -> np.ndarray:
    """(B, L', L') mask: asymmetric register mask plus padded key columns, L' = width + N_r."""
    cols = np.concatenate([key_mask(lengths, width), np.zeros((len(lengths), 1, n_registers))], axis=-1)
    return V.asymmetric_mask(width, n_registers)[None] + cols


def valid_rows(lengths: np.ndarray, width: int) -> np.ndarray:
    """Indices of unpadded rows in the (B * width) flattening, video by video."""
    return np.concatenate([i * width + np.arange(n) for i, n in enumerate(lengths)])


def mean_rows(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Mean over each video's unpadded rows: (B, L, d) -> (B, d)."""
    width = x.shape[-2]
    w = np.where(np.arange(width)[None, :] < lengths[:, None], 1.0 / lengths[:, None], 0.0)
    pooled = T.matmul(Tensor(w[:, None, :].astype(x.dtype)), x)
    return pooled.reshape(pooled.shape[0], pooled.shape[-1])


def clip_pooling(lengths: np.ndarray, width: int, m_clips: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked per-video clip pooling matrices (B, C, width) and the clip counts."""
    counts = np.minimum(lengths, m_clips)
    P = np.zeros((len(lengths), counts.max(), width))
    for i, (n, c) in enumerate(zip(lengths, counts)):
        P[i, :c, :n] = V.pooling_matrix(int(n), int(c))
    return P, counts


def adaptive_pool_matrix(lengths: np.ndarray, width: int, n_out: int) -> np.ndarray:
    """Adaptive average pooling of each video's rows into ``n_out`` windows (windows may overlap)."""
    P = np.zeros((len(lengths), n_out, width))
    for i, n in enumerate(lengths):
        for k in range(n_out):
            lo, hi = (k * n) // n_out, -((-(k + 1) * n) // n_out)
            P[i, k, lo:hi] = 1.0 / (hi - lo)
    return P


# -- forward pieces -----------------------------------------------------------

def encode_videos(pv: PaddedVideos, p: nn.Params, heads: int) -> Tensor:
    """Contextual video tokens V_v for a padded batch: (B, L, d)."""
    x = nn.linear(Tensor(pv.raw), p["proj"])
    mask = np.broadcast_to(key_mask(pv.lengths, pv.width), (len(pv.lengths), pv.width, pv.width))
    return nn.encoder_layer(x, p["layer"], heads, mask=mask)


def branch_forward(raw: np.ndarray, lengths: np.ndarray, r0: Tensor | None, p: nn.Params,
                   variances: Sequence[float], heads: int, positional: bool = False,
                   aggregator: str = "softmax") -> Tensor:
    """Padded-batch version of one video branch: (B, L, d_vid) -> (B, L, d)."""
    x = nn.linear(Tensor(raw), p["proj"])
    B, L, d = x.shape
    if positional:
        x = x + nn.sinusoidal(np.arange(L), d).astype(x.dtype)
    n_r = 0 if r0 is None else r0.shape[-2]
    h = T.concat([x, r0], axis=-2) if n_r else x
    gauss = np.stack([V.gaussian_matrix(L, n_r, v) for v in variances])
    mask = register_mask(lengths, L, n_r)[:, None]
    out = V.rab_forward(h.reshape(B, 1, L + n_r, d), gauss, mask, p["blocks"], heads)[..., :L, :]
    agg = p["agg"] if aggregator == "softmax" else {"logits": Tensor(np.zeros(len(variances), dtype=x.dtype))}
    return V.aggregate(out, agg)


def tps_targets(Q: np.ndarray, rows_per_video: Sequence[Sequence[int]], cfg: RunConfig, rng: Rng) -> np.ndarray:
    """Stacked TPS supervision targets (B, N_r, d) from each video's in-batch queries."""
    return np.stack([
        X.tps_sample(Q[rows], cfg.text.tps_gamma, cfg.model.n_registers, rng, cfg.text.tps_independent).q_hat
        for rows in rows_per_video
    ])


def generate(V_v: Tensor, lengths: np.ndarray, params: nn.Params, cfg: RunConfig, schedule: D.DiffusionSchedule,
             rng: Rng, targets: np.ndarray | None = None,
             weights: O.LossWeights | None = None) -> tuple[Tensor | None, dict[str, Tensor]]:
    """Registers r_0 for a padded batch.

    Passing ``weights`` marks a training pass and adds the register-side
    losses; the denoising loss also needs the TPS ``targets``.
    """
    parts: dict[str, Tensor] = {}
    if not cfg.uses_registers:
        return None, parts
    ab = cfg.ablation
    n_r = cfg.model.n_registers
    width = V_v.shape[-2]
    if ab.adaptive_pool:
        P = adaptive_pool_matrix(lengths, width, n_r).astype(V_v.dtype)
        return T.matmul(Tensor(P), V_v), parts
    dist = D.pvs_from_pooled(mean_rows(V_v, lengths), params["pvs"])
    c = D.make_condition(V_v, params["cond"], key_mask(lengths, width))
    if ab.no_pvs:
        r_T = Tensor(rng.spawn(1).normal((len(lengths), n_r, cfg.model.d), dtype=V_v.dtype))
    else:
        r_T = D.pvs_sample(dist, n_r, rng.spawn(1)).r
        if weights is not None and weights.lambda_kl:
            parts["pvs"] = D.loss_pvs(dist, weights.lambda_kl)
    if ab.no_dre:
        r0 = nn.linear(r_T, params["onestep"]) + c
        if targets is not None and weights.lambda_dre:
            diff = r0 - targets
            parts["dre"] = (diff * diff).mean()
    else:
        r0 = D.reverse_chain(r_T, c, schedule, params["dre"], rng.spawn(2), cfg.diffusion.reverse_noise,
                             None if ab.no_pvs else dist)
        if targets is not None and weights.lambda_dre:
            parts["dre"] = D.loss_dre(targets, c, schedule, params["dre"], rng.spawn(3))
    if cfg.diffusion.detach_registers:
        r0 = Tensor(r0.data)
    return r0, parts


@dataclass
class VideoOutputs:
    frames: Tensor  # (B, L, d), padded
    clips: Tensor  # (B, C, d), padded
    frame_lengths: np.ndarray
    clip_lengths: np.ndarray
    registers: Tensor | None

    def frame_rows(self) -> Tensor:
        B, L, d = self.frames.shape
        return self.frames.reshape(B * L, d)[valid_rows(self.frame_lengths, L)]

    def clip_rows(self) -> Tensor:
        B, C, d = self.clips.shape
        return self.clips.reshape(B * C, d)[valid_rows(self.clip_lengths, C)]


def video_forward(pv: PaddedVideos, params: nn.Params, cfg: RunConfig, schedule: D.DiffusionSchedule, rng: Rng,
                  targets: np.ndarray | None = None, weights: O.LossWeights | None = None,
                  ) -> tuple[VideoOutputs, dict[str, Tensor]]:
    m = cfg.model
    variances = V.block_variances(m.n_blocks)
    V_v = encode_videos(pv, params["video"], m.heads)
    r0, parts = generate(V_v, pv.lengths, params, cfg, schedule, rng, targets, weights)
    frames = branch_forward(pv.raw, pv.lengths, r0, params["frame"], variances, m.heads, m.positional, m.aggregator)
    P, clip_lengths = clip_pooling(pv.lengths, pv.width, m.m_clips)
    clips = branch_forward((P @ pv.raw).astype(pv.raw.dtype), clip_lengths, r0, params["clip"], variances,
                           m.heads, m.positional, m.aggregator)
    return VideoOutputs(frames, clips, pv.lengths, clip_lengths, r0), parts


# -- training step --------------------------------------------------------------

@dataclass
class BatchOutput:
    total: Tensor
    parts: dict[str, Tensor]
    S_f: Tensor
    S_c: Tensor
    pair_index: np.ndarray


def batch_losses(params: nn.Params, cfg: RunConfig, videos: Sequence[V.VideoFeatures],
                 queries: Sequence[X.QueryTokens], rng: Rng, schedule: D.DiffusionSchedule) -> BatchOutput:
    """Forward one training batch and assemble every loss component."""
    weights = cfg.loss_weights()
    dtype = model_dtype(cfg)
    col = {v.video_id: j for j, v in enumerate(videos)}
    pair_index = np.array([col[q.video_id] for q in queries])
    Q = X.encode_queries([q.features for q in queries], params["text"], cfg.model.heads)

    targets = None
    if cfg.uses_registers and not cfg.ablation.adaptive_pool and weights.lambda_dre:
        rows = [np.flatnonzero(pair_index == j) for j in range(len(videos))]
        targets = tps_targets(Q.data, rows, cfg, rng.spawn(0)).astype(dtype)
    out, parts = video_forward(pad_videos(videos, dtype), params, cfg, schedule, rng, targets, weights)

    S_f = O.segment_scores(Q, out.frame_rows(), out.frame_lengths)
    S_c = O.segment_scores(Q, out.clip_rows(), out.clip_lengths)
    parts = {"sim": O.loss_sim(S_f, S_c, pair_index, weights), **parts}
    if weights.lambda_d or weights.lambda_q:
        vids = [q.video_id for q in queries]
        parts["tssl"] = X.loss_tssl(Q, vids, weights.lambda_d, weights.lambda_q, weights.tau_qsp,
                                    weights.div_margin, weights.div_scale)
    parts = {k: parts[k] for k in O.COMPONENTS if k in parts}
    return BatchOutput(O.loss_total(parts, weights), parts, S_f, S_c, pair_index)


# -- inference ------------------------------------------------------------------

def embed_queries(params: nn.Params, cfg: RunConfig, queries: Sequence[X.QueryTokens]) -> np.ndarray:
    p = nn.detached(params["text"])
    parts = [X.encode_queries([q.features for q in queries[i:i + QUERY_CHUNK]], p, cfg.model.heads).data
             for i in range(0, len(queries), QUERY_CHUNK)]
    return np.concatenate(parts)


def embed_corpus(params: nn.Params, cfg: RunConfig, videos: Sequence[V.VideoFeatures], seed: int,
                 schedule: D.DiffusionSchedule | None = None) -> list[V.VideoEmbeddings]:
    """Register-augmented frame and clip embeddings for every video, computed once.

    Registers are sampled from fixed streams derived from ``seed``, so the
    cached corpus is identical on every call.
    """
    p = nn.detached(params)
    schedule = schedule or schedule_for(cfg)
    out: list[V.VideoEmbeddings] = []
    for c, start in enumerate(range(0, len(videos), VIDEO_CHUNK)):
        chunk = videos[start:start + VIDEO_CHUNK]
        pv = pad_videos(chunk, model_dtype(cfg))
        res, _ = video_forward(pv, p, cfg, schedule, Rng(seed, (300, c)))
        for i, v in enumerate(chunk):
            out.append(V.VideoEmbeddings(
                V_f=Tensor(res.frames.data[i, : res.frame_lengths[i]]),
                V_c=Tensor(res.clips.data[i, : res.clip_lengths[i]]),
                video_id=v.video_id,
                registers=None if res.registers is None else res.registers.data[i],
            ))
    return out


def schedule_for(cfg: RunConfig) -> D.DiffusionSchedule:
    dif = cfg.diffusion
    return D.build_schedule(dif.T, dif.beta_start, dif.beta_end)
