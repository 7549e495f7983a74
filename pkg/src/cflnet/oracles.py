"""Slow, literal reference implementations used to cross-check the fast paths.

Everything here is plain float64 numpy with explicit loops and shares no code
with the implementations it checks.
"""

import math

import numpy as np

from cflnet.srm import srm_kernels


def supcon_triple_loop(emb, labels, tau):
    """Contrastive loss by enumerating anchors, positives and negatives."""
    emb = np.asarray(emb, dtype=np.float64)
    labels = list(np.asarray(labels))
    n = len(labels)
    rows = emb.tolist()
    sim = [[sum(a * b for a, b in zip(rows[i], rows[j])) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        negatives = [q for q in range(n) if labels[q] != labels[i]]
        if not positives:
            continue
        li = 0.0
        for p in positives:
            num = math.exp(sim[i][p] / tau)
            den = num
            for q in negatives:
                den += math.exp(sim[i][q] / tau)
            li += -math.log(num / den)
        total += li / len(positives)
    return total / n


def pool_nested(feat, k):
    """Patch means then L2 normalization, one patch and one channel at a time."""
    feat = np.asarray(feat, dtype=np.float64)
    d, H, W = feat.shape
    h, w = H // k, W // k
    out = np.zeros((k * k, d))
    for r in range(k):
        for c in range(k):
            vec = np.zeros(d)
            for y in range(r * h, (r + 1) * h):
                for x in range(c * w, (c + 1) * w):
                    vec += feat[:, y, x]
            vec /= h * w
            norm = math.sqrt(float(vec @ vec))
            out[r * k + c] = vec / norm if norm > 0 else vec
    return out


def majority_nested(mask, k):
    """Per-patch label by counting 0s and 1s; ties go to 1."""
    mask = np.asarray(mask)
    H, W = mask.shape
    h, w = H // k, W // k
    labels = []
    for r in range(k):
        for c in range(k):
            ones = zeros = 0
            for y in range(r * h, (r + 1) * h):
                for x in range(c * w, (c + 1) * w):
                    if mask[y, x] == 1:
                        ones += 1
                    else:
                        zeros += 1
            labels.append(1 if ones >= zeros else 0)
    return np.array(labels)


def srm_nested(image):
    """Raw (unclamped) SRM response by direct correlation with reflect padding."""
    image = np.asarray(image, dtype=np.float64)
    H, W, C = image.shape
    kernels = srm_kernels()
    padded = np.pad(image, ((2, 2), (2, 2), (0, 0)), mode="reflect")
    out = np.zeros((H, W, 3))
    for oc in range(3):
        K = kernels[oc]
        for y in range(H):
            for x in range(W):
                acc = 0.0
                for ic in range(C):
                    for dy in range(5):
                        for dx in range(5):
                            acc += K[dy, dx] * padded[y + dy, x + dx, ic]
                out[y, x, oc] = acc / C
    return out


def auc_pairs(scores, mask):
    """AUC as the fraction of (tampered, authentic) pairs ranked correctly; ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(mask).ravel()
    pos = s[y == 1]
    neg = s[y == 0]
    credit = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                credit += 1.0
            elif a == b:
                credit += 0.5
    return credit / (len(pos) * len(neg))


def central_difference(fn, x, index, step=1e-5):
    """d fn / d x[index] by central differences; ``x`` is modified in place and restored."""
    orig = x[index].item()
    x[index] = orig + step
    up = float(fn())
    x[index] = orig - step
    down = float(fn())
    x[index] = orig
    return (up - down) / (2 * step)


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
