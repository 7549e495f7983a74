"""Pixel-level AUC evaluation, cross-dataset grids and class-mean feature export."""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.stats import rankdata

from cflnet.data import collate

REPORT_FORMAT = "cflnet-eval-report/1"
FEATURES_FORMAT = "cflnet-mean-features/1"


class UndefinedAUCError(ValueError):
    """Raised when a mask holds a single class, so AUC is undefined."""


@dataclass
class EvalReport:
    per_image_auc: list = field(default_factory=list)  # [(id, auc), ...]
    mean_auc: float = float("nan")
    skipped: int = 0
    config_hash: str = ""

    def to_text(self):
        lines = [f"# {REPORT_FORMAT}", "# aggregation: per-image AUC, arithmetic mean over images",
                 "id\tauc"]
        lines += [f"{sid}\t{auc:.10f}" for sid, auc in self.per_image_auc]
        lines += ["", "[summary]", f"mean_auc\t{self.mean_auc:.10f}", f"n_images\t{len(self.per_image_auc)}",
                  f"skipped\t{self.skipped}", f"config_hash\t{self.config_hash}"]
        return "\n".join(lines) + "\n"


def pixel_auc(scores, mask):
    """ROC AUC of per-pixel ``scores`` against a binary ``mask``.

    Uses the Mann-Whitney rank statistic with average ranks, so tied scores get
    half credit. Raises UndefinedAUCError if the mask has a single class.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(mask).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and mask differ in size")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("mask must be binary")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("mask contains a single class")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def config_hash(model, **settings):
    cfg = asdict(model.config) if hasattr(model, "config") else {}
    blob = json.dumps({"model": cfg, **settings}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@torch.no_grad()
def predict_scores(model, samples, image_size=None, batch_size=4):
    """Tampered-class probability maps for ``samples``, yielded one per sample."""
    image_size = image_size or model.config.input_size
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        images, masks = collate(chunk, image_size)
        probs = model.predict_proba(images)
        for s, p, m in zip(chunk, probs, masks):
            yield s, p.numpy(), m.numpy()


def evaluate_model(model, dataset, image_size=None, batch_size=4):
    """Per-image pixel AUC and their mean; single-class images are skipped and counted."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    report = EvalReport(config_hash=config_hash(model, image_size=image_size))
    for sample, prob, mask in predict_scores(model, dataset, image_size, batch_size):
        try:
            report.per_image_auc.append((sample.id, pixel_auc(prob, mask)))
        except UndefinedAUCError:
            report.skipped += 1
    if report.per_image_auc:
        report.mean_auc = float(np.mean([a for _, a in report.per_image_auc]))
    return report


def cross_dataset_eval(models, datasets):
    """Mean AUC for every (training set, evaluation set) pair.

    ``models`` maps a training-set name to a model or checkpoint path,
    ``datasets`` maps an evaluation-set name to a sample sequence. Returns
    ``(row_names, col_names, matrix)`` with rows = training sets.
    """
    from cflnet.model import load_checkpoint

    rows, cols = list(models), list(datasets)
    grid = np.full((len(rows), len(cols)), np.nan)
    sizes = set()
    for i, name in enumerate(rows):
        model = models[name]
        if not isinstance(model, torch.nn.Module):
            try:
                model, _ = load_checkpoint(model)
            except (ValueError, TypeError) as exc:
                raise ValueError(f"checkpoint for {name!r} is incompatible: {exc}") from exc
        sizes.add(model.config.input_size)
        if len(sizes) > 1:
            raise ValueError(f"checkpoint for {name!r} has input_size {model.config.input_size}, "
                             f"others use {sorted(sizes - {model.config.input_size})}")
        for j, ds_name in enumerate(cols):
            grid[i, j] = evaluate_model(model, datasets[ds_name]).mean_auc
    return rows, cols, grid


@torch.no_grad()
def class_mean_features(model, dataset, image_size=None, batch_size=4):
    """Per-image mean of the segmentation head's penultimate features by GT class.

    Returns a list of ``(id, class, vector)``; authentic images give only class 0.
    """
    image_size = image_size or model.config.input_size
    was_training = model.training
    model.eval()
    rows = []
    try:
        for i in range(0, len(dataset), batch_size):
            chunk = dataset[i:i + batch_size]
            images, masks = collate(chunk, image_size)
            out = model(images, training=False, return_features=True)
            feats = out.features
            if feats.shape[-2:] != masks.shape[-2:]:
                masks = torch.nn.functional.interpolate(
                    masks[:, None].float(), size=feats.shape[-2:], mode="nearest")[:, 0].long()
            for s, f, m in zip(chunk, feats, masks):
                flat = f.flatten(1)
                m = m.flatten()
                for cls in (0, 1):
                    sel = m == cls
                    if sel.any():
                        rows.append((s.id, cls, flat[:, sel].mean(dim=1).double().numpy()))
    finally:
        model.train(was_training)
    return rows


def export_mean_features(model, dataset, path=None, image_size=None):
    """Compute class-mean features and, if ``path`` is given, write them as TSV.

    File format: a ``# <format tag>`` header, then one row per vector:
    ``id<TAB>class<TAB>v0<TAB>v1...``.
    """
    rows = class_mean_features(model, dataset, image_size)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(f"# {FEATURES_FORMAT}\n")
            for sid, cls, vec in rows:
                fh.write("\t".join([sid, str(cls)] + [repr(float(v)) for v in vec]) + "\n")
    return rows


def read_mean_features(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            rows.append((parts[0], int(parts[1]), np.array([float(v) for v in parts[2:]])))
    return rows


def _cos_matrix(a, b):
    a = a / np.linalg.norm(a, axis=1, keepdims=True).clip(1e-12)
    b = b / np.linalg.norm(b, axis=1, keepdims=True).clip(1e-12)
    return a @ b.T


def separation_gap(rows):
    """Cosine-similarity summary of class-mean features.

    ``within``: mean cosine over pairs of distinct images' same-class vectors.
    ``between``: mean cosine between the class-0 and class-1 vectors of the
    same image. Returns ``(within, between, within - between)``.
    """
    by_class = {0: {}, 1: {}}
    for sid, cls, vec in rows:
        by_class[cls][sid] = vec
    within = []
    for cls in (0, 1):
        vecs = np.array(list(by_class[cls].values()))
        if len(vecs) > 1:
            c = _cos_matrix(vecs, vecs)
            within.append(c[~np.eye(len(vecs), dtype=bool)])
    mixed = sorted(set(by_class[0]) & set(by_class[1]))
    if not within or not mixed:
        raise ValueError("need at least two images per class and one mixed image")
    between = [float(_cos_matrix(by_class[0][s][None], by_class[1][s][None])[0, 0]) for s in mixed]
    w, b = float(np.mean(np.concatenate(within))), float(np.mean(between))
    return w, b, w - b
