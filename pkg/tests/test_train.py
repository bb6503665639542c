import json
import math

import numpy as np
import pytest

from dreamprvr import model as Mo
from dreamprvr import nn
from dreamprvr import train as Tr
from dreamprvr.config import ConfigError, RunConfig, load_config, save_config
from dreamprvr.data import generate_dataset
from dreamprvr.retrieval import ground_truth_ranks, recall_at_k, video_scores
from dreamprvr.video import VideoEmbeddings

from helpers import micro_config, micro_spec


def binomial_interval(n, p, level=0.99):
    """Smallest central interval [lo, hi] holding at least ``level`` of Binomial(n, p)."""
    pmf = [math.comb(n, k) * p ** k * (1 - p) ** (n - k) for k in range(n + 1)]
    tail = (1 - level) / 2
    lo, acc = 0, 0.0
    while acc + pmf[lo] <= tail:
        acc += pmf[lo]
        lo += 1
    hi, acc = n, 0.0
    while acc + pmf[hi] <= tail:
        acc += pmf[hi]
        hi -= 1
    return lo, hi


def test_binomial_interval_hand_case():
    # Binomial(4, 0.5): pmf 1/16, 4/16, 6/16, 4/16, 1/16; a 0.875 interval drops one end cell each side
    assert binomial_interval(4, 0.5, level=0.875) == (1, 3)
    assert binomial_interval(4, 0.5, level=0.9) == (0, 4)


class TestTraining:
    def test_one_epoch_smoke(self, micro_dataset, tmp_path):
        tr = Tr.Trainer(micro_config(), micro_dataset, tmp_path)
        rec = tr.run_epoch()
        assert rec["batches"] > 0
        assert all(math.isfinite(v) for v in rec["loss"].values())
        assert set(rec["loss"]) == {"sim", "tssl", "pvs", "dre", "total"}
        assert len((tmp_path / "timing.jsonl").read_text().splitlines()) == 1

    def test_same_seed_identical_logs(self, micro_dataset, tmp_path):
        Tr.train(micro_config(), micro_dataset, tmp_path / "a")
        Tr.train(micro_config(), micro_dataset, tmp_path / "b")
        a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
        assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
        assert len(a.splitlines()) == 2

    def test_resume_equals_uninterrupted(self, micro_dataset, tmp_path):
        Tr.train(micro_config(), micro_dataset, tmp_path / "full")
        first = Tr.Trainer(micro_config(), micro_dataset, tmp_path / "split")
        first.fit(1)
        ckpt = Tr.load_checkpoint(tmp_path / "split" / Tr.CHECKPOINT_NAME)
        second = Tr.Trainer.resume(ckpt, micro_dataset, tmp_path / "split")
        second.fit(1)
        assert ((tmp_path / "split" / "metrics.jsonl").read_bytes()
                == (tmp_path / "full" / "metrics.jsonl").read_bytes())
        a = nn.flatten(Tr.load_checkpoint(tmp_path / "full" / Tr.CHECKPOINT_NAME).params)
        b = nn.flatten(second.params)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_nan_aborts_with_component(self, micro_dataset):
        tr = Tr.Trainer(micro_config(), micro_dataset)
        # poisoned registers reach the retrieval scores, so 'sim' is the first component to go non-finite
        tr.params["dre"]["inp"]["w"].data[:] = np.nan
        with pytest.raises(Tr.NonFiniteLoss, match=r"epoch 1, batch 0: loss component 'sim' is nan"):
            tr.run_epoch()

    def test_progress_on_micro_corpus(self, micro_dataset):
        tr = Tr.Trainer(micro_config(train__epochs=6, train__lr=3e-3), micro_dataset)
        totals = [r["loss"]["total"] for r in tr.fit()]
        assert np.median(totals[-2:]) < np.median(totals[:2])


class TestCheckpoint:
    def test_round_trip(self, micro_dataset, tmp_path):
        tr = Tr.Trainer(micro_config(), micro_dataset)
        tr.run_epoch()
        path = Tr.save_checkpoint(tr.checkpoint(), tmp_path / "c.npz")
        back = Tr.load_checkpoint(path)
        assert back.epoch == 1 and back.config == tr.cfg and back.rng_state == tr.rng.state
        a, b = nn.flatten(tr.params), nn.flatten(back.params)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_version_rejected(self, micro_dataset, tmp_path):
        tr = Tr.Trainer(micro_config(), micro_dataset)
        ckpt = tr.checkpoint()
        ckpt.version = 99
        Tr.save_checkpoint(ckpt, tmp_path / "c.npz")
        with pytest.raises(Tr.CheckpointError, match="version 99"):
            Tr.load_checkpoint(tmp_path / "c.npz")

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(Tr.CheckpointError, match="nope.npz"):
            Tr.load_checkpoint(tmp_path / "nope.npz")

    def test_width_mismatch(self, micro_dataset):
        ckpt = Tr.Trainer(micro_config(), micro_dataset).checkpoint()
        other = generate_dataset(micro_spec(d_vid=7))
        with pytest.raises(Tr.CheckpointError):
            Tr.Trainer.resume(ckpt, other)


class TestEvaluation:
    def test_evaluate_is_read_only(self, micro_dataset):
        ckpt = Tr.Trainer(micro_config(), micro_dataset).checkpoint()
        before = {k: t.data.copy() for k, t in nn.flatten(ckpt.params).items()}
        a = Tr.evaluate(ckpt, micro_dataset, "test")
        b = Tr.evaluate(ckpt, micro_dataset, "test")
        assert a.to_json() == b.to_json()
        assert all(np.array_equal(before[k], t.data) for k, t in nn.flatten(ckpt.params).items())

    def test_planted_embeddings_rank_first(self, micro_dataset):
        cfg = micro_config()
        sp = micro_dataset.split("test")
        params = Mo.init_model(cfg, micro_dataset.d_vid, micro_dataset.d_text)
        Q = Mo.embed_queries(params, cfg, sp.queries)
        corpus = Mo.embed_corpus(params, cfg, sp.videos, 0)
        planted = []
        for e in corpus:
            rows = [Q[i] for i, q in enumerate(sp.queries) if q.video_id == e.video_id]
            V_f, V_c = (getattr(m, "data", m) for m in (e.V_f, e.V_c))
            planted.append(VideoEmbeddings(V_f=np.vstack([V_f] + rows), V_c=np.vstack([V_c] + rows), video_id=e.video_id))
        scores = video_scores(Q, planted, cfg.sim.alpha_f, cfg.sim.alpha_c)
        ranks = ground_truth_ranks(scores, [v.video_id for v in sp.videos], [q.video_id for q in sp.queries])
        assert recall_at_k(ranks, 1) == 100.0

    def test_untrained_model_is_at_chance(self):
        ds = generate_dataset(micro_spec(n_videos=4, n_test_videos=50, queries_per_moment=2, moments_per_video=2))
        cfg = micro_config()
        params = Mo.init_model(cfg, ds.d_vid, ds.d_text)
        report = Tr.evaluate_params(params, cfg, ds, "test")
        n = len(ds.split("test").queries)
        lo, hi = binomial_interval(n, 1 / 50)
        assert 100 * lo / n <= report.r_at[1] <= 100 * hi / n

    def test_retrieve(self, micro_dataset):
        ckpt = Tr.Trainer(micro_config(), micro_dataset).checkpoint()
        qid = micro_dataset.split("test").queries[3].query_id
        res = Tr.retrieve(ckpt, micro_dataset, qid, top=3)
        assert len(res.video_ids) == 3 and res.scores == sorted(res.scores, reverse=True)
        with pytest.raises(KeyError):
            Tr.retrieve(ckpt, micro_dataset, "missing")


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="model.width"):
            RunConfig.from_dict({"model": {"width": 3}})
        with pytest.raises(ConfigError, match="sections"):
            RunConfig.from_dict({"optimizer": {}})

    @pytest.mark.parametrize("key,value", [("model.d", 10), ("diffusion.beta_end", 1.0), ("train.batch_size", 1),
                                           ("sim.alpha_f", 0.9), ("diffusion.reverse_noise", "x")])
    def test_invalid(self, key, value):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides({key: value})

    def test_seed_env_override(self, tmp_path):
        save_config(micro_config(), tmp_path / "c.json")
        assert load_config(tmp_path / "c.json", env={"DREAMPRVR_SEED": "17"}).train.seed == 17
        assert load_config(tmp_path / "c.json", env={}) == micro_config()

    def test_ablation_zeroes_weights(self):
        w = RunConfig().with_overrides({"ablation.no_loss_tssl": True}).loss_weights()
        assert w.lambda_d == 0 and w.lambda_q == 0

    def test_json_round_trip(self, tmp_path):
        save_config(micro_config(), tmp_path / "c.json")
        assert json.loads((tmp_path / "c.json").read_text())["model"]["d"] == 8
