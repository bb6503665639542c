import filecmp
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dreamprvr import data as Dt
from dreamprvr.rng import Rng
from dreamprvr.text import QueryTokens


def small_spec(**kw):
    base = dict(n_videos=10, n_test_videos=4, d_vid=8, d_text=8, latent_dim=6, n_events=12)
    base.update(kw)
    return Dt.SyntheticSpec(**base)


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(tree_equal(a / s, b / s) for s in cmp.common_dirs)


def test_same_seed_byte_identical(tmp_path):
    Dt.generate_dataset(small_spec(), tmp_path / "a")
    Dt.generate_dataset(small_spec(), tmp_path / "b")
    assert tree_equal(tmp_path / "a", tmp_path / "b")


def test_different_seed_differs():
    a = Dt.generate_dataset(small_spec(seed=1)).split("train").videos[0].raw
    b = Dt.generate_dataset(small_spec(seed=2)).split("train").videos[0].raw
    assert a.shape != b.shape or not np.array_equal(a, b)


def test_query_count():
    ds = Dt.generate_dataset(small_spec(moments_per_video=2, queries_per_moment=3))
    assert len(ds.split("train").queries) == 60


def test_round_trip(tmp_path):
    ds = Dt.generate_dataset(small_spec(), tmp_path)
    back = Dt.load_dataset(tmp_path)
    for name in ("train", "test"):
        a, b = ds.split(name), back.split(name)
        assert [v.video_id for v in a.videos] == [v.video_id for v in b.videos]
        for va, vb in zip(a.videos, b.videos):
            np.testing.assert_array_equal(va.raw, vb.raw)
        for qa, qb in zip(a.queries, b.queries):
            assert (qa.query_id, qa.video_id) == (qb.query_id, qb.video_id)
            np.testing.assert_array_equal(qa.features, qb.features)
        assert a.spans == b.spans


def test_on_disk_layout(tmp_path):
    ds = Dt.generate_dataset(small_spec(), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    v = manifest["splits"]["train"]["videos"][0]
    raw = np.fromfile(tmp_path / v["file"], dtype="<f4").reshape(v["shape"])
    np.testing.assert_array_equal(raw, ds.split("train").videos[0].raw)


def test_spans_cover_frames():
    split = Dt.generate_dataset(small_spec()).split("train")
    lengths = {v.video_id: v.raw.shape[0] for v in split.videos}
    for q in split.queries:
        lo, hi = split.spans[q.query_id]
        assert 0 <= lo < hi <= lengths[q.video_id]


def test_nearest_video_sanity():
    spec = Dt.SyntheticSpec(n_videos=64, n_test_videos=0, theme_strength=0.6, noise_std=0.1)
    split = Dt.generate_dataset(spec).split("train")
    map_vid, map_text = Dt.latent_maps(spec)
    vid_lat = np.stack([v.raw.mean(axis=0) @ np.linalg.pinv(map_vid) for v in split.videos])
    ids = [v.video_id for v in split.videos]
    hits = 0
    for q in split.queries:
        lat = q.features.mean(axis=0) @ np.linalg.pinv(map_text)
        cos = vid_lat @ lat / (np.linalg.norm(vid_lat, axis=1) * np.linalg.norm(lat))
        hits += ids[int(np.argmax(cos))] == q.video_id
    assert hits / len(split.queries) >= 0.8


@pytest.mark.parametrize("bad", [dict(n_videos=0), dict(theme_strength=1.5), dict(frames_per_moment=[5, 2]),
                                 dict(noise_std=-1.0)])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        small_spec(**bad)


def test_unknown_spec_key():
    with pytest.raises(ValueError, match="unknown"):
        Dt.SyntheticSpec.from_dict({"n_video": 3})


def test_missing_dataset_names_path(tmp_path):
    with pytest.raises(Dt.DatasetError, match=str(tmp_path)):
        Dt.load_dataset(tmp_path / "nowhere")


def test_version_mismatch(tmp_path):
    Dt.generate_dataset(small_spec(), tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(Dt.DatasetError, match="version"):
        Dt.load_dataset(tmp_path)


def test_truncated_file(tmp_path):
    Dt.generate_dataset(small_spec(), tmp_path)
    victim = next((tmp_path / "videos").iterdir())
    victim.write_bytes(victim.read_bytes()[:-4])
    with pytest.raises(Dt.DatasetError, match="expected"):
        Dt.load_dataset(tmp_path)


class TestSampler:
    def test_every_query_once_and_grouped(self):
        queries = Dt.generate_dataset(small_spec(n_videos=60, queries_per_moment=1)).split("train").queries
        sampler = Dt.GroupedBatchSampler(queries, 16)
        seen = [i for b in sampler.batches(Rng(0)) for i in b]
        assert sorted(seen) == list(range(len(queries)))
        assert sampler.audit.grouped_fraction >= 0.9

    def test_batches_respect_size(self):
        queries = Dt.generate_dataset(small_spec(n_videos=30)).split("train").queries
        assert all(len(b) <= 8 for b in Dt.GroupedBatchSampler(queries, 8).batches(Rng(1)))

    def test_trailing_single_video_batch_is_merged(self):
        # groups of 3, 3 and 2 with room for 6: greedy filling would leave the last video alone
        queries = [QueryTokens(np.zeros((1, 2)), v, f"{v}{k}") for v, n in (("a", 3), ("b", 3), ("c", 2)) for k in range(n)]
        for seed in range(10):
            batches = list(Dt.GroupedBatchSampler(queries, 6).batches(Rng(seed)))
            assert all(len({queries[i].video_id for i in b}) >= 2 for b in batches)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 7), min_size=2, max_size=25), st.integers(2, 12), st.integers(0, 1000))
    def test_every_batch_spans_two_videos(self, sizes, batch_size, seed):
        queries = [QueryTokens(np.zeros((1, 2)), f"v{j}", f"v{j}_{k}") for j, n in enumerate(sizes) for k in range(n)]
        sampler = Dt.GroupedBatchSampler(queries, batch_size)
        batches = list(sampler.batches(Rng(seed)))
        assert sorted(i for b in batches for i in b) == list(range(len(queries)))
        for b in batches:
            assert len({queries[i].video_id for i in b}) >= 2
            # at most one carried-over video in front and one trailing video appended
            assert len(b) <= batch_size + 2 * max(sizes)

    def test_seeded_order(self):
        queries = Dt.generate_dataset(small_spec()).split("train").queries
        s = Dt.GroupedBatchSampler(queries, 6)
        assert list(s.batches(Rng(3))) == list(s.batches(Rng(3)))

    def test_tiny_batch_rejected(self):
        with pytest.raises(ValueError):
            Dt.GroupedBatchSampler([], 1)
