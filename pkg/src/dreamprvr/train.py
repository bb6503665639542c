"""Training loop, checkpoints, evaluation and single-query retrieval."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as Mo
from . import nn
from .config import RunConfig
from .data import Dataset, GroupedBatchSampler
from .objectives import COMPONENTS
from .optim import Adam
from .retrieval import RankedResult, RecallReport, default_k_list, ground_truth_ranks, order_by_score, recall_report, video_scores
from .rng import Rng

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.npz"


class NonFiniteLoss(FloatingPointError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: nn.Params
    optimizer: dict
    config: RunConfig
    rng_state: dict
    epoch: int
    d_vid: int
    d_text: int
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    path = Path(path)
    arrays = {f"param/{k}": t.data for k, t in nn.flatten(ckpt.params).items()}
    arrays.update({f"adam_m/{k}": v for k, v in ckpt.optimizer["m"].items()})
    arrays.update({f"adam_v/{k}": v for k, v in ckpt.optimizer["v"].items()})
    meta = {
        "format_version": ckpt.version, "epoch": ckpt.epoch, "adam_step": ckpt.optimizer["step"],
        "config": ckpt.config.to_dict(), "rng_state": ckpt.rng_state, "d_vid": ckpt.d_vid, "d_text": ckpt.d_text,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: checkpoint format version {meta.get('format_version')!r} "
                                      f"is not supported (expected {CHECKPOINT_VERSION})")
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    cfg = RunConfig.from_dict(meta["config"])
    params = Mo.init_model(cfg, meta["d_vid"], meta["d_text"])
    for name, t in nn.flatten(params).items():
        key = f"param/{name}"
        if key not in arrays or arrays[key].shape != t.shape:
            raise CheckpointError(f"{path}: parameter {name} missing or mis-shaped")
        t.data = arrays[key].astype(t.dtype)
    optimizer = {
        "step": meta["adam_step"],
        "m": {k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        "v": {k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")},
    }
    return Checkpoint(params, optimizer, cfg, meta["rng_state"], meta["epoch"], meta["d_vid"], meta["d_text"],
                      meta["format_version"])


@dataclass
class Trainer:
    """Holds model, optimizer and data for one run; each epoch draws from a stream derived from (seed, epoch)."""

    cfg: RunConfig
    dataset: Dataset
    out: Path | None = None
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    epoch_ms: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.split = self.dataset.split(self.cfg.data.train_split)
        self.params = Mo.init_model(self.cfg, self.dataset.d_vid, self.dataset.d_text)
        self.optimizer = Adam(nn.flatten(self.params), lr=self.cfg.train.lr)
        self.schedule = Mo.schedule_for(self.cfg)
        self.sampler = GroupedBatchSampler(self.split.queries, self.cfg.train.batch_size)
        self.rng = Rng(self.cfg.train.seed, (200,))
        self.video_index = self.split.video_index()
        if self.out is not None:
            self.out = Path(self.out)
            self.out.mkdir(parents=True, exist_ok=True)

    @classmethod
    def resume(cls, ckpt: Checkpoint, dataset: Dataset, out=None) -> Trainer:
        if (ckpt.d_vid, ckpt.d_text) != (dataset.d_vid, dataset.d_text):
            raise CheckpointError("checkpoint feature widths do not match the dataset")
        tr = cls(ckpt.config, dataset, out)
        for name, t in nn.flatten(tr.params).items():
            t.data = nn.flatten(ckpt.params)[name].data.copy()
        tr.optimizer.load_state_dict(ckpt.optimizer)
        tr.rng = Rng.from_state(ckpt.rng_state)
        tr.epoch = ckpt.epoch
        return tr

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.params, self.optimizer.state_dict(), self.cfg, self.rng.state, self.epoch,
                          self.dataset.d_vid, self.dataset.d_text)

    def run_epoch(self) -> dict:
        stream = self.rng.spawn(self.epoch)
        sums = {k: 0.0 for k in (*COMPONENTS, "total")}
        seen: set[str] = set()
        n_batches = 0
        start = time.perf_counter()
        for b, batch in enumerate(self.sampler.batches(stream.spawn(0))):
            queries = [self.split.queries[i] for i in batch]
            vids = list(dict.fromkeys(q.video_id for q in queries))
            videos = [self.split.videos[self.video_index[v]] for v in vids]
            out = Mo.batch_losses(self.params, self.cfg, videos, queries, stream.spawn(1, b), self.schedule)
            values = {k: float(v.data) for k, v in out.parts.items()}
            values["total"] = float(out.total.data)
            for name, value in values.items():
                if not math.isfinite(value):
                    raise NonFiniteLoss(f"epoch {self.epoch + 1}, batch {b}: loss component '{name}' is {value}")
            self.optimizer.zero_grad()
            out.total.backward()
            self.optimizer.step()
            for name, value in values.items():
                sums[name] += value
            seen.update(values)
            n_batches += 1
        elapsed = (time.perf_counter() - start) * 1000.0
        self.epoch += 1
        record = {
            "epoch": self.epoch,
            "loss": {k: v / n_batches for k, v in sums.items() if k in seen},
            "batches": n_batches,
            "grouped_fraction": self.sampler.audit.grouped_fraction,
        }
        self.history.append(record)
        self.epoch_ms.append(elapsed)
        if self.out is not None:
            with open(self.out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            with open(self.out / "timing.jsonl", "a") as fh:
                fh.write(json.dumps({"epoch": self.epoch, "ms": elapsed}) + "\n")
            every = self.cfg.train.checkpoint_every
            if every and self.epoch % every == 0:
                save_checkpoint(self.checkpoint(), self.out / CHECKPOINT_NAME)
        return record

    def fit(self, epochs: int | None = None) -> list[dict]:
        target = self.cfg.train.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            self.run_epoch()
        if self.out is not None:
            save_checkpoint(self.checkpoint(), self.out / CHECKPOINT_NAME)
        return self.history


def train(cfg: RunConfig, dataset: Dataset, out: str | os.PathLike | None = None) -> Trainer:
    trainer = Trainer(cfg, dataset, out)
    trainer.fit()
    return trainer


def median_epoch_ms(epoch_ms) -> float:
    return float(np.median(epoch_ms)) if len(epoch_ms) else float("nan")


# -- evaluation ---------------------------------------------------------------

def evaluate_params(params: nn.Params, cfg: RunConfig, dataset: Dataset, split: str | None = None) -> RecallReport:
    """Embed the split's corpus once, rank every query, and report recall."""
    sp = dataset.split(split or cfg.data.eval_split)
    corpus = Mo.embed_corpus(params, cfg, sp.videos, cfg.eval.seed)
    Q = Mo.embed_queries(params, cfg, sp.queries)
    scores = video_scores(Q, corpus, cfg.sim.alpha_f, cfg.sim.alpha_c)
    ranks = ground_truth_ranks(scores, [v.video_id for v in sp.videos], [q.video_id for q in sp.queries])
    k_list = cfg.eval.k_list or default_k_list(len(sp.videos))
    return recall_report(ranks, k_list)


def evaluate(ckpt: Checkpoint | str | os.PathLike, dataset: Dataset, split: str | None = None) -> RecallReport:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    return evaluate_params(ckpt.params, ckpt.config, dataset, split)


def retrieve(ckpt: Checkpoint | str | os.PathLike, dataset: Dataset, query_id: str, top: int = 10,
             split: str | None = None) -> RankedResult:
    """Top ``top`` videos of the query's split for one query id."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    cfg = ckpt.config
    names = [split] if split else list(dataset.splits)
    for name in names:
        sp = dataset.split(name)
        match = [q for q in sp.queries if q.query_id == query_id]
        if match:
            break
    else:
        raise KeyError(f"query id {query_id!r} not found in splits {names}")
    if top < 1:
        raise ValueError("top must be >= 1")
    corpus = Mo.embed_corpus(ckpt.params, cfg, sp.videos, cfg.eval.seed)
    scores = video_scores(Mo.embed_queries(ckpt.params, cfg, match), corpus, cfg.sim.alpha_f, cfg.sim.alpha_c)[0]
    ids = [v.video_id for v in sp.videos]
    order = order_by_score(scores, ids)[:top]
    return RankedResult(query_id=query_id, video_ids=[ids[i] for i in order], scores=[float(scores[i]) for i in order])
