"""
Register-augmented attention
============================

Video tokens attend to each other under a temporal Gaussian prior and may
also read the registers; registers read only video tokens.  A stack of
blocks with growing variance sees progressively wider context.
"""

# %%
import numpy as np

from dreamprvr import video as V
from dreamprvr.rng import Rng
from dreamprvr.tensor import Tensor

M, n_registers, d = 6, 2, 8
np.set_printoptions(precision=3, suppress=True, linewidth=110)

# %% The multiplicative Gaussian over the video-video block.
print("variances for four blocks:", V.block_variances(4))
print(V.gaussian_matrix(M, n_registers, 0.5))

# %% The additive mask: register rows cannot see register columns.
geom = V.geometry(M, n_registers, 0.5)
print((geom.mask != 0).astype(int))

# %% Attention weights of one block.
p = V.init_rab_params(Rng(1), d)
tokens = Tensor(Rng(2).normal((M + n_registers, d)))
_, w = V.gaussian_attention(tokens, geom, p["attn"], heads=4, return_weights=True)
w = np.asarray(w)[0]
print("head 0 weights (rows: queries, last two are registers)")
print(w)
print("register->register mass:", float(w[M:, M:].sum()))

# %% A full multi-variance block on a short clip, with and without registers.
stack = V.init_rab_params(Rng(3), d, (4,))
frames = Tensor(Rng(4).normal((M, d)))
registers = Rng(5).normal((n_registers, d))
with_r = V.dreamprvr_block(frames, registers, stack, V.block_variances(4)).data
without = V.dreamprvr_block(frames, None, stack, V.block_variances(4)).data
print("output shape", with_r.shape, " mean change from registers", float(np.abs(with_r - without).mean()))

# %% Clip-level tokens come from contiguous near-equal segments.
print("segments of 7 frames into 3 clips:", V.segment_bounds(7, 3))
