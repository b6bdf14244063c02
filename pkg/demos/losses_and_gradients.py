"""
The loss family, with gradients you can check by hand
=====================================================

Every training loss ships in two forms: a plain value function and a
``*_grad`` companion returning analytic gradients. Because the whole stack
is float64 numpy, central finite differences are a meaningful referee.
"""

import numpy as np

from ordino.encoders import EncodedBatch
from ordino.losses import (
    LossConfig,
    asym_contrastive_t2i,
    asym_contrastive_t2i_grad,
    cop_loss,
    cop_loss_grad,
    cross_entropy,
    pce_reference,
    scop_loss,
    softmax_probs,
)

rng = np.random.default_rng(3)


def unit(n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# A batch pairs B unit image features with M unit rank-text features.
v, r = unit(6, 8), unit(4, 8)
labels = rng.integers(0, 4, size=6)
batch = EncodedBatch(v=v, r=r, labels=labels)
cfg = LossConfig()  # tau 0.07, gamma 1, squared distance weights

p = softmax_probs(v, r, cfg.tau)
print(f"cross entropy        {cross_entropy(p, labels):9.4f}")
print(f"t2i contrastive      {asym_contrastive_t2i(batch, cfg.tau):9.4f}")
print(f"ordinal pairwise     {cop_loss(batch, cfg):9.4f}")
print(f"  simplified (scop)  {scop_loss(batch, cfg):9.4f}   == gamma=0 case")

# Spot-check one analytic gradient against central differences.
val, dv, dr, dgamma = cop_loss_grad(batch, cfg)
eps = 1e-6
fd = np.zeros_like(v)
for i in range(v.shape[0]):
    for j in range(v.shape[1]):
        orig = v[i, j]
        v[i, j] = orig + eps
        up = cop_loss(batch, cfg)
        v[i, j] = orig - eps
        dn = cop_loss(batch, cfg)
        v[i, j] = orig
        fd[i, j] = (up - dn) / (2 * eps)
rel = np.abs(dv - fd).max() / np.abs(fd).max()
print(f"\ncop image gradient vs finite differences: rel err {rel:.2e}")

_, dv_t2i, dr_t2i = asym_contrastive_t2i_grad(batch, cfg.tau)
print("t2i gradient shapes:", dv_t2i.shape, dr_t2i.shape)

# The pairwise bound decomposes cross-entropy into an attraction term
# (tightness) and a spread term (diversity); useful for analysis, not
# trained directly.
z = unit(12, 8)
zl = rng.integers(0, 3, size=12)
terms = pce_reference(z, zl, lam=1.0, n_classes=3)
print(f"\npairwise CE bound: tightness {terms.tightness:7.4f}  "
      f"diversity {terms.diversity:7.4f}  total {terms.total:7.4f}")
