"""
Generating register tokens by truncated diffusion
=================================================

A video is summarised by a Gaussian over register space.  A sample from it
is denoised for a few steps by a conditional noise estimator, which we fit
here to reproduce fixed query-derived targets for one video.
"""

# %%
import numpy as np

from dreamprvr import diffusion as D
from dreamprvr import nn
from dreamprvr import text as X
from dreamprvr.optim import Adam
from dreamprvr.rng import Rng
from dreamprvr.tensor import Tensor

d, n_registers = 8, 2
rng = Rng(0)
params = {"pvs": D.init_pvs_params(rng.spawn(1), d),
          "cond": D.init_condition_params(rng.spawn(2), d, n_registers),
          "dre": D.init_dre_params(rng.spawn(3), d)}
video = Tensor(rng.normal((6, d)))

# %% The noise schedule: cumulative signal fraction per step.
schedule = D.build_schedule(T=10)
print("alpha_bar", np.round(schedule.alpha_bar, 4))

# %% The video-centric starting distribution.
dist = D.pvs_distribution(video, params["pvs"])
print("|mu| =", round(float(np.linalg.norm(dist.mu_v.data)), 6), " KL to N(0, I) =", round(D.loss_pvs(dist).item(), 4))

# %% Targets: whitened mean of the video's queries, no perturbation.
queries = rng.normal((3, d))
target = X.tps_sample(queries, gamma=0.0, n_registers=n_registers, rng=rng).q_hat


def mean_cosine(a, b):
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return float((a * b).sum(axis=-1).mean())


before = D.generate_registers(video, schedule, params, Rng(5), n_registers).r.data
print("cosine to target before fitting", round(mean_cosine(before, target), 3))

# %% Fit the estimator with the per-step denoising loss.
opt = Adam(nn.flatten(params), lr=1e-2)
for step in range(2000):
    opt.zero_grad()
    loss = D.loss_dre(target, D.make_condition(video, params["cond"]), schedule, params["dre"], rng.spawn(10, step))
    loss.backward()
    opt.step()
    if step % 500 == 0:
        print(f"step {step:4d}  denoising loss {loss.item():.4f}")

after = D.generate_registers(video, schedule, params, Rng(5), n_registers).r.data
print("cosine to target after fitting", round(mean_cosine(after, target), 3))
