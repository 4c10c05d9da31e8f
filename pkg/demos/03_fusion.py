"""
Inside knowledge fusion
=======================

Local attention (token query), global attention ([CLS] query) and the gated
loop, on random states. Tokens with no entities pass through untouched.
"""

import numpy as np

from kfmrc.autodiff import Tensor
from kfmrc.fusion import FusionConfig, fuse, init_fusion_params

rng = np.random.default_rng(1)
B, T, K, d1, d2 = 1, 6, 3, 8, 4
H = Tensor(rng.normal(size=(B, T, d1)))
E = Tensor(rng.normal(size=(B, T, K, d2)))
mask = np.zeros((B, T, K), dtype=bool)
mask[0, 2, :2] = True  # token 2 recalls two entities
mask[0, 3, :] = True   # token 3 recalls three

out = fuse(H, E, mask, init_fusion_params(d1, d2, rng), FusionConfig(loops=2))
np.set_printoptions(precision=3, suppress=True)
print("local weights per token\n", out.alpha.data[0])
print("global weights per token\n", out.beta.data[0])
print("bypass", out.bypass[0])

# The gate lives in (sigmoid(-1), sigmoid(1)), so each loop shrinks the state.
for n, g in enumerate(out.gates):
    print(f"loop {n} gate range [{g.data.min():.3f}, {g.data.max():.3f}]")
ratio = np.linalg.norm(out.fused.data, axis=-1) / np.linalg.norm(H.data, axis=-1)
print("norm ratio h^L / h", ratio[0], "bound", round(0.7311 ** 2, 4))
