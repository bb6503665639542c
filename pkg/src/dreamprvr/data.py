"""Synthetic partially-relevant corpora, their on-disk format, and the grouped batch sampler.

Each video is a sequence of moments. Frames of a moment mix a per-video
theme latent with the moment's latent; moments are drawn from an event pool
shared by all videos, so a query's moment alone is ambiguous and the theme
is what pins down the video. Queries are short word-feature sequences built
from the same two latents in a separate feature space.

Files are a ``manifest.json`` plus one flat little-endian float32 file per
video and per query, row-major.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .rng import Rng
from .text import QueryTokens
from .video import VideoFeatures

FORMAT = "dreamprvr-synthetic"
FORMAT_VERSION = 1
SPLIT_KEYS = {"train": 0, "test": 1}


class DatasetError(RuntimeError):
    pass


def _span(value) -> tuple[int, int]:
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    lo, hi = value
    return int(lo), int(hi)


@dataclass
class SyntheticSpec:
    n_videos: int = 256
    n_test_videos: int = 64
    moments_per_video: int | list[int] = field(default_factory=lambda: [2, 4])
    frames_per_moment: int | list[int] = field(default_factory=lambda: [3, 6])
    words_per_query: int | list[int] = field(default_factory=lambda: [4, 8])
    queries_per_moment: int = 1
    d_vid: int = 32
    d_text: int = 32
    latent_dim: int = 16
    n_events: int = 48
    theme_strength: float = 0.6
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        counts = {
            "n_videos": self.n_videos, "queries_per_moment": self.queries_per_moment,
            "d_vid": self.d_vid, "d_text": self.d_text, "latent_dim": self.latent_dim, "n_events": self.n_events,
        }
        for name in ("moments_per_video", "frames_per_moment", "words_per_query"):
            lo, hi = _span(getattr(self, name))
            if hi < lo:
                raise ValueError(f"SyntheticSpec.{name}: empty range {getattr(self, name)}")
            counts[name] = lo
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"SyntheticSpec.{name} must be >= 1, got {value}")
        if self.n_test_videos < 0:
            raise ValueError("SyntheticSpec.n_test_videos must be >= 0")
        if not 0.0 <= self.theme_strength <= 1.0:
            raise ValueError(f"SyntheticSpec.theme_strength must lie in [0, 1], got {self.theme_strength}")
        if self.noise_std < 0:
            raise ValueError("SyntheticSpec.noise_std must be non-negative")

    @classmethod
    def from_dict(cls, raw: dict) -> SyntheticSpec:
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(raw) - allowed
        if bad:
            raise ValueError(f"unknown SyntheticSpec keys: {sorted(bad)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Split:
    videos: list[VideoFeatures]
    queries: list[QueryTokens]
    spans: dict[str, tuple[int, int]] = field(default_factory=dict)  # query id -> frame span

    def video_index(self) -> dict[str, int]:
        return {v.video_id: i for i, v in enumerate(self.videos)}


@dataclass
class Dataset:
    splits: dict[str, Split]
    spec: dict
    d_vid: int
    d_text: int

    def split(self, name: str) -> Split:
        if name not in self.splits:
            raise DatasetError(f"unknown split {name!r}; available: {sorted(self.splits)}")
        return self.splits[name]


# -- generation ----------------------------------------------------------------

def latent_maps(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """The fixed linear maps from latent space to video and text feature space."""
    rng = Rng(spec.seed, (0,))
    scale = 1.0 / np.sqrt(spec.latent_dim)
    return rng.normal((spec.latent_dim, spec.d_vid), std=scale), rng.normal((spec.latent_dim, spec.d_text), std=scale)


def event_pool(spec: SyntheticSpec) -> np.ndarray:
    return Rng(spec.seed, (1,)).normal((spec.n_events, spec.latent_dim))


def _draw(rng: Rng, span) -> int:
    lo, hi = _span(span)
    return int(rng.integers(lo, hi + 1))


def generate_video(spec: SyntheticSpec, split: str, index: int, maps, events) -> tuple[VideoFeatures, list, dict]:
    """One video with its queries; draws depend only on (seed, split, index)."""
    rng = Rng(spec.seed, (2, SPLIT_KEYS[split], index))
    map_vid, map_text = maps
    ts = spec.theme_strength
    video_id = f"{split[:2]}{index:05d}"
    theme = rng.normal((spec.latent_dim,))
    n_moments = _draw(rng, spec.moments_per_video)
    chosen = rng.permutation(spec.n_events)[:n_moments] if n_moments <= spec.n_events else rng.integers(0, spec.n_events, n_moments)
    frames, queries, spans, start = [], [], {}, 0
    for m, event in enumerate(chosen):
        moment = events[event] + 0.3 * rng.normal((spec.latent_dim,))
        n_frames = _draw(rng, spec.frames_per_moment)
        latent = ts * theme + (1.0 - ts) * moment
        drift = 0.2 * rng.normal((n_frames, spec.latent_dim))
        frames.append((latent + drift) @ map_vid + spec.noise_std * rng.normal((n_frames, spec.d_vid)))
        for k in range(spec.queries_per_moment):
            n_words = _draw(rng, spec.words_per_query)
            words = latent + 0.2 * rng.normal((n_words, spec.latent_dim))
            feats = words @ map_text + spec.noise_std * rng.normal((n_words, spec.d_text))
            qid = f"{video_id}_m{m}_q{k}"
            queries.append(QueryTokens(features=feats.astype(np.float32), video_id=video_id, query_id=qid))
            spans[qid] = (start, start + n_frames)
        start += n_frames
    raw = np.concatenate(frames).astype(np.float32)
    return VideoFeatures(raw=raw, video_id=video_id), queries, spans


def generate_split(spec: SyntheticSpec, split: str) -> Split:
    maps, events = latent_maps(spec), event_pool(spec)
    n = spec.n_videos if split == "train" else spec.n_test_videos
    videos, queries, spans = [], [], {}
    for i in range(n):
        video, qs, sp = generate_video(spec, split, i, maps, events)
        videos.append(video)
        queries.extend(qs)
        spans.update(sp)
    return Split(videos=videos, queries=queries, spans=spans)


def generate_dataset(spec: SyntheticSpec, out: str | os.PathLike | None = None) -> Dataset:
    """Build every split in memory and, when ``out`` is given, write it to disk."""
    splits = {"train": generate_split(spec, "train")}
    if spec.n_test_videos:
        splits["test"] = generate_split(spec, "test")
    ds = Dataset(splits=splits, spec=spec.to_dict(), d_vid=spec.d_vid, d_text=spec.d_text)
    if out is not None:
        save_dataset(ds, out)
    return ds


# -- on-disk format ---------------------------------------------------------

def _write_f32(path: Path, arr: np.ndarray) -> None:
    try:
        path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc.strerror}") from exc


def _read_f32(path: Path, shape) -> np.ndarray:
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from exc
    arr = np.frombuffer(buf, dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise DatasetError(f"{path}: expected {tuple(shape)} floats, found {arr.size}")
    return arr.reshape(shape).astype(np.float32)


def save_dataset(ds: Dataset, out: str | os.PathLike) -> Path:
    root = Path(out)
    try:
        for sub in ("videos", "queries"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {root}: {exc.strerror}") from exc
    manifest = {"format": FORMAT, "version": FORMAT_VERSION, "spec": ds.spec,
                "d_vid": ds.d_vid, "d_text": ds.d_text, "splits": {}}
    for name, split in ds.splits.items():
        videos, queries = [], []
        for v in split.videos:
            rel = f"videos/{v.video_id}.f32"
            _write_f32(root / rel, v.raw)
            videos.append({"id": v.video_id, "shape": list(v.raw.shape), "file": rel})
        for q in split.queries:
            rel = f"queries/{q.query_id}.f32"
            _write_f32(root / rel, q.features)
            entry = {"id": q.query_id, "video_id": q.video_id, "shape": list(q.features.shape), "file": rel}
            if q.query_id in split.spans:
                entry["span"] = list(split.spans[q.query_id])
            queries.append(entry)
        manifest["splits"][name] = {"videos": videos, "queries": queries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


def load_dataset(path: str | os.PathLike) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read {mpath}: {exc.strerror}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{mpath}: unsupported dataset format {manifest.get('format')!r} "
                           f"version {manifest.get('version')!r}")
    splits = {}
    for name, entry in manifest["splits"].items():
        videos = [VideoFeatures(raw=_read_f32(root / v["file"], v["shape"]), video_id=v["id"]) for v in entry["videos"]]
        queries = [QueryTokens(features=_read_f32(root / q["file"], q["shape"]), video_id=q["video_id"], query_id=q["id"])
                   for q in entry["queries"]]
        spans = {q["id"]: tuple(q["span"]) for q in entry["queries"] if "span" in q}
        splits[name] = Split(videos=videos, queries=queries, spans=spans)
    return Dataset(splits=splits, spec=manifest["spec"], d_vid=manifest["d_vid"], d_text=manifest["d_text"])


# -- batching ---------------------------------------------------------------

@dataclass
class BatchAudit:
    queries: int = 0
    grouped: int = 0  # queries sharing their batch with another query of the same video

    @property
    def grouped_fraction(self) -> float:
        return self.grouped / self.queries if self.queries else 1.0


class GroupedBatchSampler:
    """Shuffle videos, then fill batches with whole per-video query groups.

    A group only spills across a batch boundary when it is larger than the
    batch itself, so same-video queries almost always travel together.
    """

    def __init__(self, queries: Sequence[QueryTokens], batch_size: int):
        if batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        self.batch_size = batch_size
        groups: dict[str, list[int]] = {}
        for i, q in enumerate(queries):
            groups.setdefault(q.video_id, []).append(i)
        self.groups = list(groups.values())
        self.video_ids = list(groups)
        self.owner = {i: n for n, group in enumerate(self.groups) for i in group}
        self.audit = BatchAudit()

    def batches(self, rng: Rng) -> Iterator[list[int]]:
        """Yield index batches; a batch that would cover a single video is merged into a neighbour.

        Contrastive losses need two videos per batch, so a merged batch may
        exceed ``batch_size`` by that one video's queries.
        """
        out: list[list[int]] = []
        batch: list[int] = []
        for g in rng.permutation(len(self.groups)):
            group = self.groups[g]
            if batch and len(batch) + len(group) > self.batch_size:
                out.append(batch)
                batch = []
            for start in range(0, len(group), self.batch_size):
                chunk = group[start:start + self.batch_size]
                if len(batch) + len(chunk) > self.batch_size:
                    out.append(batch)
                    batch = []
                batch.extend(chunk)
        if batch:
            out.append(batch)
        merged: list[list[int]] = []
        pending: list[int] = []
        for b in out:
            b = pending + b
            pending = []
            if self._n_videos(b) < 2:
                pending = b
            else:
                merged.append(b)
        if pending:
            if merged:
                merged[-1] = merged[-1] + pending
            else:
                merged.append(pending)
        for b in merged:
            yield self._emit(b)

    def _n_videos(self, batch: list[int]) -> int:
        return len({self.owner[i] for i in batch})

    def _emit(self, batch: list[int]) -> list[int]:
        owner = self.owner
        counts: dict[int, int] = {}
        for i in batch:
            counts[owner[i]] = counts.get(owner[i], 0) + 1
        self.audit.queries += len(batch)
        self.audit.grouped += sum(1 for i in batch if counts[owner[i]] > 1)
        return batch
