import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cflnet.data import ForgerySample, synth_dataset
from cflnet.metrics import (
    EvalReport,
    UndefinedAUCError,
    class_mean_features,
    cross_dataset_eval,
    evaluate_model,
    export_mean_features,
    pixel_auc,
    read_mean_features,
    separation_gap,
)
from cflnet.model import CFLNet, ModelConfig, save_checkpoint
from cflnet.oracles import auc_pairs

TINY = ModelConfig(input_size=32, embed_dim=8, aspp_channels=8, encoder="resnet18", encoder_stages=2)


def test_auc_perfect_ranking():
    assert pixel_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_constant_scores():
    assert pixel_auc(np.full((4, 4), 0.3), np.eye(4, dtype=int)) == 0.5


def test_auc_worked_example():
    assert pixel_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-12)
    assert auc_pairs([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedAUCError):
        pixel_auc(np.random.rand(4, 4), np.zeros((4, 4)))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**31 - 1), st.booleans())
def test_auc_matches_pair_counting(n, seed, quantize):
    rng = np.random.default_rng(seed)
    scores = rng.random(n)
    if quantize:
        scores = np.round(scores * 4) / 4  # force ties
    mask = rng.integers(0, 2, n)
    mask[0], mask[1] = 0, 1
    auc = pixel_auc(scores, mask)
    assert abs(auc - auc_pairs(scores, mask)) <= 1e-9
    assert abs(pixel_auc(1 - scores, mask) - (1 - auc)) <= 1e-9
    assert abs(pixel_auc(np.exp(3 * scores) - 7, mask) - auc) <= 1e-12


def _model():
    torch.manual_seed(0)
    return CFLNet(TINY).eval()


def _mixed(sid, size=32):
    rng = np.random.default_rng(abs(hash(sid)) % 2**32)
    mask = np.zeros((size, size), np.uint8)
    mask[4:20, 6:22] = 1
    return ForgerySample(rng.integers(0, 256, (size, size, 3), dtype=np.uint8), mask, sid)


def test_evaluate_skips_authentic_images():
    ds = [_mixed("a"), _mixed("b"), ForgerySample(np.zeros((32, 32, 3), np.uint8), np.zeros((32, 32), np.uint8), "c")]
    rep = evaluate_model(_model(), ds)
    assert rep.skipped == 1 and len(rep.per_image_auc) == 2
    assert rep.mean_auc == pytest.approx(np.mean([a for _, a in rep.per_image_auc]))
    assert all(0 <= a <= 1 for _, a in rep.per_image_auc)


def test_evaluate_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        evaluate_model(_model(), [])


def test_report_mean_and_text():
    rep = EvalReport(per_image_auc=[("x", 0.9), ("y", 0.7)], mean_auc=0.8, skipped=0, config_hash="abc")
    text = rep.to_text()
    assert text.startswith("# cflnet-eval-report/1")
    assert "mean_auc\t0.8000000000" in text


def test_cross_dataset_grid(tmp_path):
    m1, m2 = _model(), _model()
    save_checkpoint(tmp_path / "m2.pt", m2)
    datasets = {n: [_mixed(f"{n}{i}") for i in range(2)] for n in ("p", "q", "r")}
    rows, cols, grid = cross_dataset_eval({"A": m1, "B": tmp_path / "m2.pt"}, datasets)
    assert rows == ["A", "B"] and cols == ["p", "q", "r"] and grid.shape == (2, 3)
    assert grid[0, 1] == evaluate_model(m1, datasets["q"]).mean_auc


def test_cross_dataset_rejects_incompatible(tmp_path):
    torch.save({"format": "other"}, tmp_path / "bad.pt")
    with pytest.raises(ValueError, match="'B'"):
        cross_dataset_eval({"A": _model(), "B": tmp_path / "bad.pt"}, {"p": [_mixed("p")]})
    big = CFLNet(ModelConfig(input_size=64, embed_dim=8, aspp_channels=8, encoder="resnet18", encoder_stages=2))
    with pytest.raises(ValueError, match="input_size"):
        cross_dataset_eval({"A": _model(), "B": big}, {"p": [_mixed("p")]})


def test_feature_export_rows(tmp_path):
    authentic = ForgerySample(np.full((32, 32, 3), 9, np.uint8), np.zeros((32, 32), np.uint8), "auth")
    ds = [_mixed("a"), _mixed("b"), authentic]
    rows = export_mean_features(_model(), ds, tmp_path / "f.tsv")
    assert [(r[0], r[1]) for r in rows] == [("a", 0), ("a", 1), ("b", 0), ("b", 1), ("auth", 0)]
    assert all(r[2].shape == (8,) and np.isfinite(r[2]).all() for r in rows)
    back = read_mean_features(tmp_path / "f.tsv")
    assert (tmp_path / "f.tsv").read_text().startswith("# cflnet-mean-features/1")
    for (i1, c1, v1), (i2, c2, v2) in zip(rows, back):
        assert (i1, c1) == (i2, c2)
        np.testing.assert_array_equal(v1, v2)


def test_constant_features_give_equal_class_means():
    model = _model()
    with torch.no_grad():
        model.seg_head.hidden[0].weight.zero_()
    rows = class_mean_features(model, [_mixed("a")])
    np.testing.assert_allclose(rows[0][2], rows[1][2], atol=1e-6)


def test_separation_gap():
    e = np.eye(3)
    rows = [("a", 0, e[0]), ("a", 1, e[1]), ("b", 0, e[0]), ("b", 1, e[1])]
    assert separation_gap(rows) == (1.0, 0.0, 1.0)
