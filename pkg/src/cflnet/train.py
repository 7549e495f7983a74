"""Training loop: Adam on the combined loss with a step-decay learning rate."""

import json
import logging
import math
import random
from pathlib import Path

import numpy as np
import torch

from cflnet.contrastive import combined_loss
from cflnet.data import collate
from cflnet.model import CFLNet, save_checkpoint

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    pass


def lr_at_epoch(epoch, base_lr=1e-4, decay=0.8, every=20):
    """Learning rate for 0-based ``epoch``: ``base_lr * decay ** (epoch // every)``."""
    return base_lr * decay ** (epoch // every)


def seed_everything(seed, deterministic=True):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator).tolist()
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(model, dataset, cfg, val_dataset=None, out_dir=None, log_fn=None):
    """Fit ``model`` on ``dataset`` (a sequence of ForgerySample).

    Stops after ``cfg.epochs`` epochs or ``cfg.max_steps`` optimizer steps,
    whichever comes first. Each epoch appends one record to the returned log
    (and to ``out_dir/train_log.jsonl``). When ``out_dir`` is set, the final
    weights go to ``last.pt`` and, given ``val_dataset``, the best-validation
    weights to ``best.pt``.
    """
    from cflnet.metrics import evaluate_model

    if len(dataset) == 0:
        raise ValueError("empty dataset")
    seed_everything(cfg.seed)
    if model is None:
        model = CFLNet(cfg.model_config())
    gen = torch.Generator().manual_seed(cfg.seed)
    optimizer = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=cfg.lr)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w")

    history, step, best_auc = [], 0, -math.inf
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at_epoch(epoch, cfg.lr, cfg.lr_decay, cfg.decay_every)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            sums = {"l_ce": 0.0, "l_con": 0.0, "total": 0.0}
            n_batches = 0
            for idx in _batches(len(dataset), cfg.batch_size, gen):
                batch = [dataset[i] for i in idx]
                images, masks = collate(batch, cfg.image_size)
                if cfg.flip_augment and bool(torch.rand((), generator=gen) < 0.5):
                    images, masks = images.flip(-1), masks.flip(-1)
                out = model(images, training=cfg.use_contrastive)
                losses = combined_loss(out, masks, k=cfg.k, tau=cfg.tau, class_weights=cfg.ce_weights,
                                       use_contrastive=cfg.use_contrastive)
                if not torch.isfinite(losses.total):
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch} step {step}; batch ids: {[s.id for s in batch]}")
                optimizer.zero_grad(set_to_none=True)
                losses.total.backward()
                optimizer.step()
                step += 1
                n_batches += 1
                for key, value in losses.as_floats().items():
                    sums[key] += value
                if cfg.max_steps and step >= cfg.max_steps:
                    break

            record = {"epoch": epoch, "step": step, **{k: v / n_batches for k, v in sums.items()}, "lr": lr}
            if val_dataset is not None and len(val_dataset):
                report = evaluate_model(model, val_dataset, image_size=cfg.image_size)
                record["val_auc"] = report.mean_auc
                if out_dir is not None and report.mean_auc > best_auc:
                    best_auc = report.mean_auc
                    save_checkpoint(out_dir / "best.pt", model, train_config=cfg.__dict__, epoch=epoch)
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if log_fn is not None:
                log_fn(record)
            log.info("epoch %d step %d total %.4f lr %.2e", epoch, step, record["total"], lr)
            if cfg.max_steps and step >= cfg.max_steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_dir is not None:
        save_checkpoint(out_dir / "last.pt", model, train_config=cfg.__dict__, epoch=len(history) - 1)
    return model, history
