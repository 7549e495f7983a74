"""Oracle cross-checks runnable without pytest (``cflnet selftest``)."""

import numpy as np
import torch

from cflnet import oracles
from cflnet.contrastive import downsample_mask_majority, partition_and_pool, supcon_loss
from cflnet.metrics import pixel_auc
from cflnet.srm import apply_srm


def _supcon_suite(rng, tau_scale):
    worst = 0.0
    for _ in range(50):
        n, d = int(rng.integers(2, 33)), int(rng.integers(2, 17))
        emb = rng.normal(size=(n, d))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        y = rng.integers(0, 2, n)
        tau = float(rng.choice([0.05, 0.1, 0.5]))
        got = supcon_loss(torch.from_numpy(emb), torch.from_numpy(y), tau * tau_scale).item()
        ref = oracles.supcon_triple_loop(emb, y, tau)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-12))
    return worst <= 1e-6, f"max rel err {worst:.2e}"


def _pooling_suite(rng, tau_scale):
    worst, label_mismatch = 0.0, 0
    for _ in range(30):
        k = int(rng.choice([1, 2, 4]))
        side = k * int(rng.integers(1, 4))
        feat = rng.normal(size=(int(rng.integers(1, 9)), side, side))
        mask = (rng.random((side, side)) < rng.random()).astype(np.int64)
        emb = partition_and_pool(torch.from_numpy(feat), k).numpy()
        worst = max(worst, float(np.abs(emb - oracles.pool_nested(feat, k)).max()))
        labels = downsample_mask_majority(torch.from_numpy(mask), k).numpy()
        label_mismatch += int((labels != oracles.majority_nested(mask, k)).sum())
    return worst <= 1e-7 and label_mismatch == 0, f"max abs err {worst:.1e}, label mismatches {label_mismatch}"


def _auc_suite(rng, tau_scale):
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 65))
        scores = np.round(rng.random(n) * 8) / 8
        mask = rng.integers(0, 2, n)
        mask[:2] = (0, 1)
        worst = max(worst, abs(pixel_auc(scores, mask) - oracles.auc_pairs(scores, mask)))
    return worst <= 1e-9, f"max abs err {worst:.1e}"


def _srm_suite(rng, tau_scale):
    worst = 0.0
    for _ in range(3):
        img = rng.integers(0, 256, size=(16, 16, 3)).astype(np.float64)
        worst = max(worst, float(np.abs(apply_srm(img, clip=None) - oracles.srm_nested(img)).max()))
    const = apply_srm(np.full((16, 16, 3), 77.0))
    return worst <= 1e-6 and not const.any(), f"max abs err {worst:.1e}"


def _gradient_suite(rng, tau_scale):
    worst = 0.0
    for _ in range(3):
        raw = torch.from_numpy(rng.normal(size=(12, 5))).requires_grad_(True)
        y = torch.from_numpy(rng.integers(0, 2, 12))

        def loss():
            return supcon_loss(torch.nn.functional.normalize(raw, dim=1), y, 0.1 * tau_scale)

        loss().backward()
        for _ in range(10):
            idx = (int(rng.integers(12)), int(rng.integers(5)))
            with torch.no_grad():
                fd = oracles.central_difference(loss, raw.data, idx)
            worst = max(worst, oracles.relative_error(raw.grad[idx].item(), fd, floor=1e-6))
    return worst < 1e-4, f"max rel err {worst:.1e}"


SUITES = [
    ("supcon-vs-triple-loop", _supcon_suite),
    ("pooling-and-majority", _pooling_suite),
    ("auc-pair-counting", _auc_suite),
    ("srm-correlation", _srm_suite),
    ("gradient-check", _gradient_suite),
]


def run_selftest(seed=0, tau_scale=1.0):
    """Run every suite; returns ``(all_passed, report_lines)``.

    ``tau_scale`` != 1 feeds a wrong temperature to the implementation under
    test only (fault injection); the supervised contrastive suite must then fail.
    """
    lines, ok = [], True
    for name, suite in SUITES:
        rng = np.random.default_rng([seed, len(name)])
        passed, detail = suite(rng, tau_scale)
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'}  {name:<24} {detail}")
    lines.append(f"{'ALL PASS' if ok else 'FAILED'}")
    return ok, lines
