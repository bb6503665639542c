"""Register generation by truncated, text-supervised diffusion.

The reverse chain starts from a video-centric Gaussian sample instead of pure
noise and runs only ``T`` steps. All functions accept extra leading axes so
the registers of several videos can be generated in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .rng import Rng
from .tensor import Tensor

STAGES = ("initial", "intermediate", "final")


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @classmethod
    def from_betas(cls, betas) -> DiffusionSchedule:
        """Schedule from explicit betas; zero betas are allowed for limit cases."""
        beta = np.asarray(betas, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0 or np.any(beta < 0) or np.any(beta >= 1):
            raise ValueError(f"betas must be a non-empty 1-D array in [0, 1), got {betas!r}")
        alpha = 1.0 - beta
        return cls(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha), sigma=np.sqrt(beta))

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")


def build_schedule(T: int = 10, beta_start: float = 1e-4, beta_end: float = 0.05) -> DiffusionSchedule:
    """Linear beta schedule from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ValueError(f"build_schedule: T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"build_schedule: need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return DiffusionSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))


@dataclass
class PvsDistribution:
    mu_v: Tensor  # (..., d), unit norm
    sigma_v: Tensor  # (..., d), positive
    log_var: Tensor


@dataclass
class RegisterSet:
    r: Tensor  # (..., N_r, d)
    stage: str = "final"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown register stage {self.stage!r}")


# -- parameters ---------------------------------------------------------------

def init_pvs_params(rng: Rng, d: int, dtype=np.float64) -> nn.Params:
    return {
        "mu": nn.init_linear(rng, d, d, dtype=dtype),
        "mu_norm": nn.init_layer_norm(d, dtype=dtype),
        "log_var": nn.init_linear(rng, d, d, dtype=dtype),
    }


def init_condition_params(rng: Rng, d: int, n_registers: int, dtype=np.float64) -> nn.Params:
    return {
        "prompt": nn.param(rng.normal((n_registers, d), std=1.0 / np.sqrt(d), dtype=dtype)),
        "q": nn.init_linear(rng, d, d, dtype=dtype),
        "k": nn.init_linear(rng, d, d, dtype=dtype),
        "v": nn.init_linear(rng, d, d, dtype=dtype),
        "o": nn.init_linear(rng, d, d, dtype=dtype),
    }


def init_dre_params(rng: Rng, d: int, n_blocks: int = 2, dtype=np.float64) -> nn.Params:
    return {
        "inp": nn.init_linear(rng, d, d, dtype=dtype),
        "cond": nn.init_linear(rng, d, d, dtype=dtype),
        "blocks": {
            str(i): {"norm": nn.init_layer_norm(d, dtype=dtype), "fc": nn.init_linear(rng, d, d, dtype=dtype)}
            for i in range(n_blocks)
        },
        "out": nn.init_linear(rng, d, d, dtype=dtype),
    }


# -- probabilistic variational sampler ---------------------------------------

def pvs_from_pooled(pooled: Tensor, p: nn.Params) -> PvsDistribution:
    single = pooled.ndim == 1
    if single:
        pooled = pooled.reshape(1, -1)
    mu = T.l2_normalize(nn.layer_norm(nn.linear(pooled, p["mu"]), p["mu_norm"]))
    log_var = nn.linear(pooled, p["log_var"])
    if single:
        mu, log_var = mu.reshape(-1), log_var.reshape(-1)
    return PvsDistribution(mu_v=mu, sigma_v=T.exp(log_var * 0.5), log_var=log_var)


def pvs_distribution(V_v: Tensor, p: nn.Params) -> PvsDistribution:
    """Gaussian over the initial registers from the temporal mean of ``V_v``."""
    if V_v.shape[-2] < 1:
        raise ValueError("pvs_distribution: video has no frames")
    return pvs_from_pooled(V_v.mean(axis=-2), p)


def pvs_sample(dist: PvsDistribution, n_registers: int, rng: Rng, eta: np.ndarray | None = None) -> RegisterSet:
    """r_T = sigma_v * eta + mu_v, one fresh eta row per register."""
    if n_registers < 1:
        raise ValueError("pvs_sample: need at least one register")
    lead = dist.mu_v.shape[:-1]
    d = dist.mu_v.shape[-1]
    if eta is None:
        eta = rng.normal(lead + (n_registers, d), dtype=dist.mu_v.dtype)
    sigma = dist.sigma_v.reshape(*lead, 1, d)
    mu = dist.mu_v.reshape(*lead, 1, d)
    return RegisterSet(r=sigma * eta + mu, stage="initial")


def kl_standard_normal(dist: PvsDistribution) -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) summed over the last axis."""
    return ((dist.mu_v * dist.mu_v + T.exp(dist.log_var) - 1.0 - dist.log_var) * 0.5).sum(axis=-1)


def loss_pvs(dist: PvsDistribution, lambda_kl: float = 1.0) -> Tensor:
    """Weighted KL to the standard normal, averaged over any leading (video) axes."""
    if lambda_kl < 0:
        raise ValueError("loss_pvs: weight must be non-negative")
    return kl_standard_normal(dist).mean() * lambda_kl


# -- condition generator and noise estimator ----------------------------------

def make_condition(V_v: Tensor, p: nn.Params, key_mask=None) -> Tensor:
    """Single-head cross-attention from learnable prompts onto the video tokens: (..., N_r, d).

    ``key_mask`` is an additive (..., 1, N_v) array hiding padded tokens.
    """
    q = nn.linear(p["prompt"], p["q"])
    k = nn.linear(V_v, p["k"])
    v = nn.linear(V_v, p["v"])
    return nn.linear(T.attention(q, k, v, mask=key_mask), p["o"])


def time_embedding(t, d: int) -> np.ndarray:
    return nn.sinusoidal(t, d)


def dre_predict(q_t, t, c, p: nn.Params) -> Tensor:
    """Predict the noise in ``q_t`` at step ``t`` given condition ``c``.

    ``t`` is an int or an array whose shape matches the leading axes of
    ``q_t`` beyond its own (N_r, d) trailing axes.
    """
    q_t = T.as_tensor(q_t)
    d = q_t.shape[-1]
    t = np.asarray(t)
    temb = time_embedding(t, d).astype(q_t.dtype)
    temb = temb.reshape(t.shape + (1,) * (q_t.ndim - 1 - t.ndim) + (d,))
    h = nn.linear(q_t, p["inp"]) + nn.linear(T.as_tensor(c, q_t), p["cond"]) + temb
    for key in sorted(p["blocks"], key=int):
        block = p["blocks"][key]
        h = h + nn.linear(T.gelu(nn.layer_norm(h, block["norm"])), block["fc"])
    return nn.linear(h, p["out"])


Predictor = Callable[..., Tensor]


def forward_diffuse(q0, t: int, eps, schedule: DiffusionSchedule):
    """q_t = sqrt(alpha_bar_t) q_0 + sqrt(1 - alpha_bar_t) eps."""
    schedule.check_step(t)
    ab = schedule.alpha_bar[t - 1]
    return q0 * np.sqrt(ab) + eps * np.sqrt(1.0 - ab)


def loss_dre(q0, c, schedule: DiffusionSchedule, params: nn.Params, rng: Rng,
             predict: Predictor | None = None) -> Tensor:
    """Noise-prediction error accumulated over every step t = 1..T, averaged over T.

    A fresh noise draw is taken per step in ascending t; all steps are then
    pushed through the estimator together.
    """
    predict = predict or dre_predict
    q0 = T.as_tensor(q0)
    eps = np.stack([rng.normal(q0.shape, dtype=q0.dtype) for _ in range(schedule.T)])
    steps = np.arange(1, schedule.T + 1)
    shape = (schedule.T,) + (1,) * q0.ndim
    ab = schedule.alpha_bar.reshape(shape).astype(q0.dtype)
    q_t = q0 * np.sqrt(ab) + eps * np.sqrt(1.0 - ab)
    eps_hat = predict(q_t, steps, c, params)
    diff = eps_hat - eps
    return (diff * diff).mean()


def reverse_step(q_t, t: int, c, z, schedule: DiffusionSchedule, params: nn.Params,
                 eps_hat=None, predict: Predictor | None = None):
    """One ancestral step q_t -> q_{t-1}."""
    schedule.check_step(t)
    if eps_hat is None:
        eps_hat = (predict or dre_predict)(q_t, t, c, params)
    alpha = schedule.alpha[t - 1]
    one_minus_ab = 1.0 - schedule.alpha_bar[t - 1]
    coef = (1.0 - alpha) / np.sqrt(one_minus_ab) if one_minus_ab > 0 else 0.0
    out = (q_t - eps_hat * coef) * (1.0 / np.sqrt(alpha))
    if z is not None and schedule.sigma[t - 1] > 0:
        out = out + z * schedule.sigma[t - 1]
    return out


def reverse_chain(r_T: Tensor, c, schedule: DiffusionSchedule, params: nn.Params, rng: Rng,
                  reverse_noise: str = "standard", dist: PvsDistribution | None = None,
                  predict: Predictor | None = None) -> Tensor:
    """Run the reverse process from ``r_T`` down to r_0; z is zero on the final step."""
    if reverse_noise not in ("standard", "pvs"):
        raise ValueError(f"unknown reverse_noise {reverse_noise!r}")
    q = r_T
    for t in range(schedule.T, 0, -1):
        z = None
        if t > 1:
            if reverse_noise == "pvs" and dist is not None:
                z = pvs_sample(dist, r_T.shape[-2], rng).r
            else:
                z = rng.normal(r_T.shape, dtype=r_T.dtype)
        q = reverse_step(q, t, c, z, schedule, params, predict=predict)
    return q


def generate_registers(V_v: Tensor, schedule: DiffusionSchedule, params: nn.Params, rng: Rng,
                       n_registers: int, reverse_noise: str = "standard") -> RegisterSet:
    """Sample r_T from the video-centric Gaussian and denoise it into r_0.

    ``params`` holds the ``pvs``, ``cond`` and ``dre`` sub-trees.
    """
    dist = pvs_distribution(V_v, params["pvs"])
    r_T = pvs_sample(dist, n_registers, rng).r
    c = make_condition(V_v, params["cond"])
    r0 = reverse_chain(r_T, c, schedule, params["dre"], rng, reverse_noise, dist)
    return RegisterSet(r=r0, stage="final")
