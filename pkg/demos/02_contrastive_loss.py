# %% [markdown]
# # The patch-level contrastive loss
#
# The projection map is cut into a k x k grid. Each patch becomes one unit
# vector (mean then normalize), each mask patch one label (majority vote, ties
# to "tampered"). The loss pulls same-label patches of one image together and
# pushes the two regions apart.

# %%
import math

import torch

from cflnet.contrastive import downsample_mask_majority, partition_and_pool, pixel_supcon_oracle, supcon_loss

# %%
# Four identical embeddings: every anchor sees one positive and two equally
# close negatives, so each term is log 3 whatever the temperature.
same = torch.tensor([[0.6, 0.8]] * 4, dtype=torch.float64)
print(supcon_loss(same, torch.tensor([0, 0, 1, 1]), tau=0.1).item(), math.log(3))

# %%
# Rotating the tampered pair away from the authentic pair drives the loss down.
for deg in (10, 45, 90, 135, 180):
    t = math.radians(deg)
    emb = torch.tensor([[1, 0], [1, 0], [math.cos(t), math.sin(t)], [math.cos(t), math.sin(t)]], dtype=torch.float64)
    print(f"{deg:>3} deg  L_con = {supcon_loss(emb, torch.tensor([0, 0, 1, 1]), 0.1).item():.3e}")

# %% [markdown]
# Pooling over an 8 x 8 map with k = 4 averages 4 vectors per patch. With
# k equal to the map size every patch is one pixel and the loss equals the
# brute-force per-pixel version.

# %%
feat = torch.randn(16, 8, 8, dtype=torch.float64)
mask = torch.zeros(8, 8, dtype=torch.long)
mask[2:6, 3:8] = 1
print(partition_and_pool(feat, 4).shape, downsample_mask_majority(mask, 4).view(4, 4))
patched = supcon_loss(partition_and_pool(feat, 8), downsample_mask_majority(mask, 8), 0.1).item()
print(patched, pixel_supcon_oracle(feat, mask, 0.1))
