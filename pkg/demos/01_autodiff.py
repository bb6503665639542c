"""
Reverse-mode gradients on numpy arrays
======================================

Everything in the package trains through a small tape-based Tensor.  This
walk-through builds a tiny loss, backpropagates it and compares the result
with central differences.
"""

# %%
import numpy as np

from dreamprvr import tensor as T
from dreamprvr.gradcheck import finite_difference_check
from dreamprvr.rng import Rng
from dreamprvr.tensor import Tensor

rng = Rng(0)

# %% A leaf tensor records operations applied to it.
x = Tensor(rng.normal((3, 4)), requires_grad=True)
w = Tensor(rng.normal((4, 2)), requires_grad=True)
y = T.gelu(x @ w)
loss = T.logsumexp(y, axis=-1).sum()
loss.backward()
print("loss", round(loss.item(), 6))
print("dloss/dw\n", np.round(w.grad, 4))

# %% Central differences agree with the tape.
err = finite_difference_check(lambda t: T.logsumexp(T.gelu(x @ t), axis=-1).sum(), w)
print(f"max relative error vs finite differences: {err:.2e}")

# %% Fused attention with a multiplicative Gaussian and an additive mask.
q = Tensor(rng.normal((5, 3)), requires_grad=True)
k, v = Tensor(rng.normal((5, 3))), Tensor(rng.normal((5, 3)))
idx = np.arange(5)
gauss = np.exp(-((idx[:, None] - idx[None, :]) ** 2) / 2.0)
mask = np.zeros((5, 5))
mask[:, -1] = T.LARGE_NEGATIVE
out, weights = T.attention(q, k, v, gauss=gauss, mask=mask, return_weights=True)
print("attention rows sum to", np.round(np.asarray(weights).sum(axis=-1), 12))
print("mass on masked column", float(np.asarray(weights)[:, -1].max()))
