"""
Fully developed speckle
=======================

Multiplicative speckle Y = X * N with N drawn from a unit-mean Gamma law.
The number of looks L sets the shape; more looks means less noise.
"""

import numpy as np

from specklelab import (LossConfig, SpeckleConfig, apply_speckle, enl, gamma_speckle_field,
                        reference_gamma_pmf, synthetic_scene)

# draw a large field for a few look counts and compare the moments with 1 and 1/L
for looks in (1, 2, 4, 16):
    n = gamma_speckle_field(SpeckleConfig(looks=looks, seed=looks), 1000, 1000)
    print(f"L={looks:2d}  mean {n.mean():.4f}  var {n.var():.4f}  (1/L = {1 / looks:.4f})")

# the equivalent number of looks of a flat region recovers L from the data alone
flat = np.full((200, 200), 0.4)
for looks in (1, 4):
    y = apply_speckle(flat, gamma_speckle_field(SpeckleConfig(looks, 0), 200, 200))
    print(f"ENL of a speckled flat region, L={looks}: {enl(y):.3f}")

# speckle preserves mean intensity but wrecks local contrast
x = synthetic_scene(256, seed=1)
y = apply_speckle(x, gamma_speckle_field(SpeckleConfig(1, 3), 256, 256))
print(f"scene mean {x.mean():.4f}, speckled mean {y.mean():.4f}")
print(f"scene std {x.std():.4f}, speckled std {y.std():.4f}")

# the binned reference law that the loss and the ratio metrics compare against
pmf = reference_gamma_pmf(1, LossConfig())
print("first bins of the L=1 reference pmf:", np.round(pmf.probs[:6], 4))
print("bin width", pmf.widths[0], "range", pmf.bin_edges[-1])
