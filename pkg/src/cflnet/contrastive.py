"""Patch-level supervised contrastive loss and the combined training objective.

The projection map F of every image is cut into a k x k grid, each patch is
mean-pooled to one embedding, the ground-truth mask is reduced to one label
per patch by majority vote, and a supervised contrastive loss is computed
within the image. The total objective is the (unweighted) sum of a
class-weighted cross-entropy and that contrastive term.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_TAU = 0.1
DEFAULT_GRID = 64
DEFAULT_CE_WEIGHTS = (1.0, 10.0)

# rows whose norm falls below this are degenerate (all-zero patches)
_DEGENERATE_NORM = 1e-12
_UNIT_TOL = 1e-3


@dataclass
class LossBreakdown:
    l_ce: torch.Tensor
    l_con: torch.Tensor
    total: torch.Tensor
    anchors_used: int

    def as_floats(self):
        return {k: float(getattr(self, k).detach()) for k in ("l_ce", "l_con", "total")}


def _check_binary(mask):
    if mask.numel() and not torch.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary (values in {0, 1})")


def _grid_shape(H, W, k):
    if k <= 0 or H % k or W % k:
        raise ValueError(f"grid size k={k} must divide the spatial size {H}x{W}")
    return H // k, W // k


def partition_and_pool(feat, k):
    """Mean-pool ``feat`` over a k x k grid of patches and L2-normalize.

    ``feat`` is (d, H, W) or (B, d, H, W). Returns (k*k, d) or (B, k*k, d) with
    patches in row-major order. All-zero patches stay exactly zero.
    """
    squeeze = feat.dim() == 3
    if squeeze:
        feat = feat[None]
    h, w = _grid_shape(feat.shape[-2], feat.shape[-1], k)
    pooled = F.avg_pool2d(feat, kernel_size=(h, w), stride=(h, w))
    emb = pooled.flatten(2).transpose(1, 2)
    emb = F.normalize(emb, dim=-1, eps=_DEGENERATE_NORM)
    return emb[0] if squeeze else emb


def downsample_mask_majority(mask, k):
    """Majority-vote label per patch of a binary (H, W) or (B, H, W) mask.

    A patch with exactly as many 1s as 0s is labelled 1.
    """
    mask = torch.as_tensor(mask)
    _check_binary(mask)
    squeeze = mask.dim() == 2
    if squeeze:
        mask = mask[None]
    h, w = _grid_shape(mask.shape[-2], mask.shape[-1], k)
    B = mask.shape[0]
    ones = mask.to(torch.int64).reshape(B, k, h, k, w).sum(dim=(2, 4))
    labels = (2 * ones >= h * w).to(torch.int64).reshape(B, k * k)
    return labels[0] if squeeze else labels


def supcon_loss(embeddings, labels, tau=DEFAULT_TAU, return_anchors=False):
    """Supervised contrastive loss over one image's patch embeddings.

    For anchor i and each positive p (same label, p != i) the term is
    ``-log(exp(s_ip) / (exp(s_ip) + sum_neg exp(s_in)))`` with ``s = f.f / tau``;
    the anchor loss is the mean over its positives. The result averages anchor
    losses over all non-degenerate rows, anchors without positives counting as 0.
    All-zero rows are treated as degenerate and excluded as anchors and keys.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    labels = torch.as_tensor(labels, device=embeddings.device)
    if embeddings.dim() != 2 or labels.shape != embeddings.shape[:1]:
        raise ValueError("expected (n, d) embeddings and n labels")

    norms = embeddings.detach().norm(dim=1)
    valid = norms > _DEGENERATE_NORM
    if torch.any((norms[valid] - 1).abs() > _UNIT_TOL):
        raise ValueError("embeddings must be L2-normalized")
    n_valid = int(valid.sum())
    if n_valid == 0:
        zero = embeddings.sum() * 0
        return (zero, 0) if return_anchors else zero

    sim = embeddings @ embeddings.T / tau
    pair_ok = valid[:, None] & valid[None, :]
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(len(labels), dtype=torch.bool, device=embeddings.device)
    pos = same & ~eye & pair_ok
    neg = ~same & pair_ok

    has_neg = neg.any(dim=1)
    neg_sim = torch.where(neg, sim, torch.full_like(sim, -torch.inf))
    neg_sim = torch.where(has_neg[:, None], neg_sim, torch.zeros_like(sim))
    neg_lse = torch.logsumexp(neg_sim, dim=1)
    neg_lse = torch.where(has_neg, neg_lse, torch.full_like(neg_lse, -torch.inf))

    # -log(e^a / (e^a + e^b)) == softplus(b - a)
    terms = F.softplus(neg_lse[:, None] - sim)
    terms = torch.where(pos, terms, torch.zeros_like(terms))
    n_pos = pos.sum(dim=1)
    per_anchor = terms.sum(dim=1) / n_pos.clamp(min=1)
    loss = per_anchor.sum() / n_valid
    if return_anchors:
        return loss, int((n_pos > 0).sum())
    return loss


def pixel_supcon_oracle(feat, mask, tau=DEFAULT_TAU, max_pixels=256):
    """Brute-force per-pixel contrastive loss over every pixel embedding.

    Evaluates the per-pixel formula literally in float64 numpy. Intended for
    small maps only; larger inputs are refused.
    """
    feat = np.asarray(feat.detach().cpu() if torch.is_tensor(feat) else feat, dtype=np.float64)
    mask = np.asarray(mask.detach().cpu() if torch.is_tensor(mask) else mask)
    d, H, W = feat.shape
    if H * W > max_pixels:
        raise ValueError(f"{H}x{W} map exceeds the oracle limit of {max_pixels} pixels")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary")
    z = feat.reshape(d, H * W).T
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    y = mask.reshape(-1)
    e = np.exp(z @ z.T / tau)
    n = len(y)
    total = 0.0
    for i in range(n):
        others = np.arange(n) != i
        pos = others & (y == y[i])
        if not pos.any():
            continue
        neg_sum = e[i, y != y[i]].sum()
        total += np.mean(-np.log(e[i, pos] / (e[i, pos] + neg_sum)))
    return total / n


def weighted_ce_loss(logits, mask, class_weights=DEFAULT_CE_WEIGHTS):
    """Class-weighted pixel cross-entropy, normalized by the sum of applied weights."""
    mask = torch.as_tensor(mask, device=logits.device)
    _check_binary(mask)
    if logits.dim() == 3:
        logits, mask = logits[None], mask[None]
    weight = torch.as_tensor(class_weights, dtype=logits.dtype, device=logits.device)
    return F.cross_entropy(logits, mask.long(), weight=weight)


def combined_loss(output, masks, k=DEFAULT_GRID, tau=DEFAULT_TAU,
                  class_weights=DEFAULT_CE_WEIGHTS, use_contrastive=True):
    """Total loss ``l_ce + l_con`` for a batch.

    ``output`` carries ``logits`` (B, 2, H, W) and ``projection`` (B, d, h, w);
    ``masks`` is (B, H, W). The contrastive term is computed per image and
    averaged over the batch. With ``use_contrastive=False`` it is fixed at 0
    (the cross-entropy-only ablation) and the projection may be absent.
    """
    masks = torch.as_tensor(masks, device=output.logits.device)
    if masks.dim() == 2:
        masks = masks[None]
    l_ce = weighted_ce_loss(output.logits, masks, class_weights)
    anchors = 0
    if use_contrastive:
        if output.projection is None:
            raise RuntimeError("combined_loss needs the projection map; run the model in training mode")
        emb = partition_and_pool(output.projection, k)
        labels = downsample_mask_majority(masks, k)
        per_image = []
        for e, y in zip(emb, labels):
            loss, used = supcon_loss(e, y, tau, return_anchors=True)
            per_image.append(loss)
            anchors += used
        l_con = torch.stack(per_image).mean()
    else:
        l_con = torch.zeros((), dtype=l_ce.dtype, device=l_ce.device)
    return LossBreakdown(l_ce=l_ce, l_con=l_con, total=l_ce + l_con, anchors_used=anchors)
