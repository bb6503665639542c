"""
Training and retrieval on a synthetic corpus
============================================

Generates a small corpus of untrimmed "videos" whose moments are described
by text queries, trains a compact model for a few epochs, then ranks the
held-out videos for every query.

Run: ``python demos/04_train_and_retrieve.py [out_dir]``
"""

# %%
import sys
from pathlib import Path

from dreamprvr import model as Mo
from dreamprvr import retrieval as Rv
from dreamprvr import train as Tr
from dreamprvr.config import RunConfig
from dreamprvr.data import SyntheticSpec, generate_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %% A corpus with a shared theme per video and distinct moments inside it.
spec = SyntheticSpec(n_videos=96, n_test_videos=48, n_events=16, theme_strength=0.3, noise_std=0.5)
ds = generate_dataset(spec, out / "data")
for name, split in ds.splits.items():
    print(f"{name}: {len(split.videos)} videos, {len(split.queries)} queries")

# %% A small model: 32-d, two attention blocks, four registers, four diffusion steps.
cfg = RunConfig().with_overrides({
    "model.d": 32, "model.n_blocks": 2, "model.n_registers": 4, "model.m_clips": 4, "diffusion.T": 4,
    "loss.lambda_d": 0.1, "loss.lambda_q": 0.1, "train.epochs": 8, "train.lr": 1e-3, "train.batch_size": 64,
})
untrained = Tr.evaluate_params(Mo.init_model(cfg, ds.d_vid, ds.d_text), cfg, ds)
print("untrained:", untrained.to_json())

trainer = Tr.Trainer(cfg, ds, out / "run")
for record in trainer.fit():
    parts = "  ".join(f"{k}={v:.3f}" for k, v in record["loss"].items())
    print(f"epoch {record['epoch']}: {parts}")

# %% Recall on the held-out split, from the saved checkpoint.
report = Tr.evaluate(out / "run" / Tr.CHECKPOINT_NAME, ds)
print(report.to_text())

# %% Top videos for one query; the ground-truth video is marked.
query = ds.split("test").queries[0]
hits = Tr.retrieve(out / "run" / Tr.CHECKPOINT_NAME, ds, query.query_id, top=5)
for vid, score in zip(hits.video_ids, hits.scores):
    print(f"  {vid}  {score:.3f}{'  <- ground truth' if vid == query.video_id else ''}")

# %% A 2-D projection of the query embeddings, coloured by video, for external plotting.
test = ds.split("test")
Q = Mo.embed_queries(trainer.params, cfg, test.queries)
rows = Rv.export_projection(list(Q), [q.video_id for q in test.queries])
(out / "query_projection.csv").write_text(Rv.projection_csv(rows))
print("wrote", out / "query_projection.csv")
