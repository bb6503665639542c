"""Cross-modal similarity scores and the training loss stack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LossWeights:
    margin: float = 0.2
    lambda_c: float = 0.02
    lambda_f: float = 0.02
    lambda_dre: float = 1.0
    lambda_kl: float = 1.0
    lambda_d: float = 1.0
    lambda_q: float = 0.5
    tau_nce: float = 0.05
    tau_qsp: float = 0.1
    div_margin: float = 0.2
    div_scale: float = 5.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")
        if self.tau_nce <= 0 or self.tau_qsp <= 0:
            raise ValueError("temperatures must be positive")


@dataclass
class SimilarityMatrix:
    S_f: Tensor  # (B_q, B_v)
    S_c: Tensor
    S: Tensor
    pair_index: np.ndarray  # ground-truth column per query row


def sim_scores(q: Tensor, V_f: Tensor, V_c: Tensor) -> tuple[Tensor, Tensor]:
    """Max cosine between the query and any frame / any clip of one video."""
    q = q.reshape(1, -1)
    return T.cosine_matrix(q, V_f).max(), T.cosine_matrix(q, V_c).max()


def segment_scores(Q: Tensor, rows: Tensor, lengths: Sequence[int]) -> Tensor:
    """Max cosine of every query against each run of ``lengths`` consecutive rows: (B_q, len(lengths))."""
    return T.segment_max(T.matmul(T.l2_normalize(Q), T.l2_normalize(rows).T), lengths)


def sim_matrix(Q: Tensor, frames: Sequence[Tensor], clips: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
    """(B_q, B_v) frame- and clip-scale score matrices for a batch of videos."""

    def scores(parts):
        flat = T.concat(list(parts), axis=0) if len(parts) > 1 else parts[0]
        return segment_scores(Q, flat, [p.shape[0] for p in parts])

    return scores(frames), scores(clips)


def check_simplex(alpha_f: float, alpha_c: float) -> None:
    if not (0 <= alpha_f <= 1 and 0 <= alpha_c <= 1 and abs(alpha_f + alpha_c - 1) < 1e-9):
        raise ValueError(f"similarity weights must lie on the simplex, got alpha_f={alpha_f}, alpha_c={alpha_c}")


def similarity(S_f, S_c, alpha_f: float = 0.3, alpha_c: float = 0.7):
    check_simplex(alpha_f, alpha_c)
    return S_f * alpha_f + S_c * alpha_c


def _negative_mask(pair_index: np.ndarray, n_videos: int) -> np.ndarray:
    """True where (query row, video column) is not a ground-truth pair."""
    return pair_index[:, None] != np.arange(n_videos)[None, :]


def loss_triplet(S: Tensor, pair_index, margin: float = 0.2) -> Tensor:
    """Hinge loss against the hardest in-batch negative video and negative query of every pair."""
    S = T.as_tensor(S)
    pair_index = np.asarray(pair_index)
    n_q, n_v = S.shape
    if n_v < 2:
        raise ValueError("loss_triplet: need at least two videos in the batch")
    neg = _negative_mask(pair_index, n_v)
    block = np.where(neg, 0.0, T.LARGE_NEGATIVE).astype(S.dtype)
    rows = np.arange(n_q)
    positive = S[rows, pair_index]
    hardest_video = (S + block).max(axis=1)
    hardest_query = (S + block).max(axis=0)[pair_index]
    cost = T.relu(hardest_query - positive + margin) + T.relu(hardest_video - positive + margin)
    return cost.mean()


def loss_infonce(S: Tensor, pair_index, tau: float = 0.05) -> Tensor:
    """Symmetric InfoNCE on exp(S / tau) against in-batch negative queries and videos."""
    if tau <= 0:
        raise ValueError(f"loss_infonce: temperature must be positive, got {tau}")
    S = T.as_tensor(S)
    pair_index = np.asarray(pair_index)
    n_q, n_v = S.shape
    logits = S / tau
    rows = np.arange(n_q)
    positive = logits[rows, pair_index]
    # query -> videos: every other column is a negative
    video_side = T.logsumexp(logits, axis=1) - positive
    # video -> queries: row i, column r holds S[r, pair(i)]; keep r == i and other-video queries
    cols = logits[:, pair_index].T
    keep = (pair_index[None, :] != pair_index[:, None]) | np.eye(n_q, dtype=bool)
    query_side = T.logsumexp(cols + np.where(keep, 0.0, T.LARGE_NEGATIVE).astype(S.dtype), axis=1) - positive
    return (video_side + query_side).mean()


def loss_sim(S_f: Tensor, S_c: Tensor, pair_index, weights: LossWeights) -> Tensor:
    total = loss_triplet(S_c, pair_index, weights.margin) + loss_triplet(S_f, pair_index, weights.margin)
    if weights.lambda_c:
        total = total + loss_infonce(S_c, pair_index, weights.tau_nce) * weights.lambda_c
    if weights.lambda_f:
        total = total + loss_infonce(S_f, pair_index, weights.tau_nce) * weights.lambda_f
    return total


COMPONENTS = ("sim", "tssl", "pvs", "dre")


def loss_total(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """L_sim + L_tssl + L_pvs + lambda_dre * L_dre; missing components count as zero."""
    total = parts["sim"]
    for name in ("tssl", "pvs"):
        if name in parts:
            total = total + parts[name]
    if "dre" in parts and weights.lambda_dre:
        total = total + parts["dre"] * weights.lambda_dre
    return total
