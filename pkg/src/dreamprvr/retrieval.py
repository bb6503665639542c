"""Corpus ranking, recall metrics and 2-D projection export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .objectives import check_simplex
from .tensor import Tensor

DEFAULT_K = (1, 5, 10, 100)
SMALL_CORPUS_K = (1, 5, 10, 50)


@dataclass
class RankedResult:
    query_id: str
    video_ids: list[str]
    scores: list[float]


@dataclass
class RecallReport:
    r_at: dict[int, float]
    sum_r: float
    k_list: tuple[int, ...] = field(default=DEFAULT_K)
    n_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "r_at": {str(k): v for k, v in self.r_at.items()},
            "sum_r": self.sum_r,
            "k_list": list(self.k_list),
            "n_queries": self.n_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        head = "  ".join(f"{'R@' + str(k):>7}" for k in self.k_list) + f"  {'SumR':>7}"
        row = "  ".join(f"{self.r_at[k]:7.1f}" for k in self.k_list) + f"  {self.sum_r:7.1f}"
        return head + "\n" + row


def default_k_list(corpus_size: int) -> tuple[int, ...]:
    return SMALL_CORPUS_K if corpus_size < 100 else DEFAULT_K


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def video_scores(q: np.ndarray, corpus, alpha_f: float = 0.3, alpha_c: float = 0.7) -> np.ndarray:
    """Scores of one or more queries (rows of ``q``) against every video in ``corpus``."""
    check_simplex(alpha_f, alpha_c)
    q = _unit_rows(np.atleast_2d(_as_array(q)))
    out = np.empty((q.shape[0], len(corpus)))
    for j, emb in enumerate(corpus):
        s_f = (q @ _unit_rows(_as_array(emb.V_f)).T).max(axis=1)
        s_c = (q @ _unit_rows(_as_array(emb.V_c)).T).max(axis=1)
        out[:, j] = alpha_f * s_f + alpha_c * s_c
    return out


def order_by_score(scores: Sequence[float], video_ids: Sequence[str]) -> np.ndarray:
    """Indices by descending score; exact ties go to the smaller video id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray([str(v) for v in video_ids])
    return np.lexsort((ids, -scores))


def rank_corpus(query, corpus, alpha_f: float = 0.3, alpha_c: float = 0.7, query_id: str | None = None) -> RankedResult:
    """Rank every video in ``corpus`` for one query embedding."""
    if len(corpus) == 0:
        raise ValueError("rank_corpus: empty corpus")
    q = getattr(query, "q", query)
    query_id = query_id if query_id is not None else getattr(query, "query_id", "")
    scores = video_scores(q, corpus, alpha_f, alpha_c)[0]
    ids = [e.video_id if e.video_id is not None else str(j) for j, e in enumerate(corpus)]
    order = order_by_score(scores, ids)
    return RankedResult(query_id=query_id, video_ids=[ids[i] for i in order], scores=[float(scores[i]) for i in order])


def ground_truth_ranks(scores: np.ndarray, video_ids: Sequence[str], truth: Sequence[str]) -> np.ndarray:
    """1-based rank of each query's true video under the same ordering as :func:`order_by_score`."""
    ids = np.asarray([str(v) for v in video_ids])
    col = {v: j for j, v in enumerate(ids)}
    idx = np.array([col[str(t)] for t in truth])
    own = scores[np.arange(len(idx)), idx][:, None]
    ahead = (scores > own) | ((scores == own) & (ids[None, :] < ids[idx][:, None]))
    return ahead.sum(axis=1) + 1


def recall_at_k(ranks, K: int) -> float:
    """Percentage of queries whose ground truth sits at rank <= K.

    ``ranks`` may be 1-based integer ranks or ``(RankedResult, truth)`` pairs.
    """
    if K < 1:
        raise ValueError(f"recall_at_k: K must be >= 1, got {K}")
    ranks = _to_ranks(ranks)
    if len(ranks) == 0:
        raise ValueError("recall_at_k: no queries")
    return 100.0 * float(np.count_nonzero(ranks <= K)) / len(ranks)


def _to_ranks(ranks) -> np.ndarray:
    if len(ranks) and isinstance(ranks[0], tuple):
        return np.array([res.video_ids.index(str(truth)) + 1 for res, truth in ranks])
    return np.asarray(ranks)


def sum_recalls(values) -> float:
    if isinstance(values, dict):
        values = values.values()
    return float(sum(values))


def recall_report(ranks, k_list: Sequence[int] = DEFAULT_K) -> RecallReport:
    ranks = _to_ranks(ranks)
    r_at = {int(k): recall_at_k(ranks, int(k)) for k in k_list}
    return RecallReport(r_at=r_at, sum_r=sum_recalls(r_at), k_list=tuple(int(k) for k in k_list), n_queries=len(ranks))


def pca_2d(embeddings) -> np.ndarray:
    """Project rows onto the top two principal axes with a deterministic sign convention."""
    X = np.asarray([_as_array(e).reshape(-1) for e in embeddings], dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("export_projection: need at least two embeddings")
    X = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    axes = np.zeros((2, X.shape[1]))
    k = min(2, vt.shape[0])
    axes[:k] = vt[:k]
    for row in axes:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1
    return X @ axes.T


def export_projection(embeddings, labels: Sequence) -> list[dict]:
    coords = pca_2d(embeddings)
    if len(labels) != len(coords):
        raise ValueError("export_projection: one label per embedding required")
    return [{"x": float(x), "y": float(y), "label": str(lab)} for (x, y), lab in zip(coords, labels)]


def projection_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["x", "y", "label"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({"x": f"{row['x']:.10g}", "y": f"{row['y']:.10g}", "label": row["label"]})
    return buf.getvalue()
