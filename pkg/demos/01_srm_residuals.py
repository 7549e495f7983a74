# %% [markdown]
# # Noise residuals from SRM filters
#
# The second encoder stream never sees raw colours. It sees what is left after
# three fixed high-pass stencils remove the image content: mostly sensor noise,
# edges and resampling traces. A pasted region usually carries noise from a
# different camera or processing chain, which shows up here.

# %%
import numpy as np

from cflnet.data import synth_authentic, synth_forge
from cflnet.srm import apply_srm, srm_kernels

for name, k in zip(["second order (1/4)", "KV (1/12)", "horizontal (1/2)"], srm_kernels()):
    print(name, "sum =", round(float(k.sum()), 12), "centre =", k[2, 2])

# %% [markdown]
# Build two authentic images with different noise levels and splice one into
# the other.

# %%
rng = np.random.default_rng(3)
pool = [synth_authentic(rng, 128) for _ in range(4)]
sample = synth_forge(pool, rng_seed=11, op_type="splice")
residual = apply_srm(sample.image)
print("residual range:", residual.min(), residual.max())

# %%
# Residual energy inside vs outside the tampered region.
energy = np.abs(residual).mean(axis=2)
inside, outside = energy[sample.mask == 1].mean(), energy[sample.mask == 0].mean()
print(f"mean |residual| inside {inside:.3f}, outside {outside:.3f}")

# %% [markdown]
# A flat image has no residual at all, and any response beyond +-3 is clipped.

# %%
print("flat image:", np.abs(apply_srm(np.full((16, 16, 3), 200, np.uint8))).max())
