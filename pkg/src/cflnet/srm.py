"""Fixed SRM high-pass filtering for the noise stream."""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SRM_CLIP = 3.0

_K1 = [[0, 0, 0, 0, 0],
       [0, -1, 2, -1, 0],
       [0, 2, -4, 2, 0],
       [0, -1, 2, -1, 0],
       [0, 0, 0, 0, 0]]

_K2 = [[-1, 2, -2, 2, -1],
       [2, -6, 8, -6, 2],
       [-2, 8, -12, 8, -2],
       [2, -6, 8, -6, 2],
       [-1, 2, -2, 2, -1]]

_K3 = [[0, 0, 0, 0, 0],
       [0, 0, 0, 0, 0],
       [0, 1, -2, 1, 0],
       [0, 0, 0, 0, 0],
       [0, 0, 0, 0, 0]]


def srm_kernels():
    """Return the three 5x5 SRM kernels, pre-scaled, as a (3, 5, 5) float64 array.

    Order: second-order 1/4 kernel, 1/12 "KV" kernel, 1/2 horizontal kernel.
    """
    bank = np.array([_K1, _K2, _K3], dtype=np.float64)
    return bank / np.array(_NORMS)[:, None, None]


_NORMS = (4.0, 12.0, 2.0)


def _integer_weight(dtype):
    return torch.tensor([_K1, _K2, _K3], dtype=dtype)[:, None]


def srm_response(x, clip=SRM_CLIP):
    """Batched SRM residual of ``x`` (B, 3, H, W) in [0, 255] pixel units.

    Reflect padding keeps the spatial size; pass ``clip=None`` for the raw response.
    """
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
    if x.shape[-2] < 5 or x.shape[-1] < 5:
        raise ValueError(f"spatial size must be at least 5x5, got {tuple(x.shape[-2:])}")
    # correlate the channel sum with the integer stencils, scale afterwards:
    # equal to the per-channel mean of the scaled responses, and exactly zero
    # on constant integer-valued images
    summed = F.pad(x.sum(dim=1, keepdim=True), (2, 2, 2, 2), mode="reflect")
    out = F.conv2d(summed, _integer_weight(x.dtype).to(x.device))
    scale = torch.tensor([1.0 / (3 * n) for n in _NORMS], dtype=x.dtype, device=x.device)
    out = out * scale.view(1, 3, 1, 1)
    if clip is not None:
        out = out.clamp(-clip, clip)
    return out


def apply_srm(image, clip=SRM_CLIP):
    """SRM residual of a single H x W x 3 RGB image with values in [0, 255].

    Returns an H x W x 3 float64 array clamped to [-clip, clip].
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] < 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
    if image.shape[2] != 3:
        raise ValueError(f"expected exactly 3 channels, got {image.shape[2]}")
    x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float64)).permute(2, 0, 1)[None]
    out = srm_response(x, clip=clip)
    return out[0].permute(1, 2, 0).numpy()


class SrmFilter(nn.Module):
    """Frozen SRM layer; the kernels are constants, never parameters."""

    def __init__(self, clip=SRM_CLIP):
        super().__init__()
        self.clip = clip

    def forward(self, x):
        return srm_response(x, clip=self.clip)
