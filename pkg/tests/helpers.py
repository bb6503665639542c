"""Micro-scale configs and corpora shared by the pipeline tests."""

from dreamprvr.config import RunConfig
from dreamprvr.data import SyntheticSpec

MICRO = {
    "model.d": 8, "model.heads": 4, "model.n_blocks": 2, "model.n_registers": 2, "model.m_clips": 3,
    "diffusion.T": 2, "train.batch_size": 8, "train.epochs": 2,
}


def micro_config(**overrides) -> RunConfig:
    """Micro model (d = 8, N_a = 2, N_r = 2, T = 2); keys use ``section__name``."""
    extra = {k.replace("__", "."): v for k, v in overrides.items()}
    return RunConfig().with_overrides({**MICRO, **extra})


def micro_spec(**kw) -> SyntheticSpec:
    base = dict(n_videos=16, n_test_videos=8, d_vid=6, d_text=5, latent_dim=4, n_events=8,
                frames_per_moment=[2, 3], words_per_query=[2, 3], queries_per_moment=2, moments_per_video=2)
    base.update(kw)
    return SyntheticSpec(**base)
