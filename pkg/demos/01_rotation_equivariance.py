"""Rotating the input rotates the prediction.

Builds a small p4m network with randomized normalization statistics,
feeds it one random image and each of its eight dihedral copies, and
compares the outputs.  The plain twin is shown for contrast.
"""

# %%
import numpy as np

from gseg import SegNetConfig, build, enumerate_group, no_grad
from gseg.audit import randomize_buffers
from gseg.layers import transform_feature_z2

rng = np.random.default_rng(0)
image = rng.standard_normal((1, 3, 32, 32))
config = SegNetConfig(group="p4m", base_width=2)

# %% equivariant net: every transform lands on the transformed output
net = randomize_buffers(build(config, seed=1), seed=2).eval()
with no_grad():
    base = net(image).main_logits.data
    for g in enumerate_group(config.group):
        moved = net(transform_feature_z2(g, image)).main_logits.data
        dev = np.abs(moved - transform_feature_z2(g, base)).max()
        print(f"p4m   mirror={g.mirror} turns={g.quarter_turns}  max deviation {dev:.1e}")

# %% plain twin: same graph over the trivial group, widths scaled by sqrt(8)
plain = randomize_buffers(build(config.plain_twin(), seed=1), seed=2).eval()
with no_grad():
    base = plain(image).main_logits.data
    g = enumerate_group(config.group)[1]
    moved = plain(transform_feature_z2(g, image)).main_logits.data
print(f"plain quarter turn  max deviation {np.abs(moved - transform_feature_z2(g, base)).max():.1e}")
