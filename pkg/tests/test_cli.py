import json

import numpy as np
import pytest
import torch
from PIL import Image

from cflnet.cli import main
from cflnet.data import load_dataset, synth_dataset, write_dataset
from cflnet.model import CFLNet, ModelConfig, load_checkpoint, save_checkpoint

TOY_OVERRIDES = ["image_size=32", "k=8", "encoder=resnet18", "encoder_stages=2", "embed_dim=8",
                 "aspp_channels=8", "batch_size=2"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_dataset(synth_dataset(4, seed=3, size=32), root, split="all")
    return root


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    save_checkpoint(path, CFLNet(ModelConfig(input_size=32, embed_dim=8, aspp_channels=8,
                                             encoder="resnet18", encoder_stages=2)))
    return path


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_is_byte_identical(tmp_path):
    args = ["synth", "--count", "100", "--seed", "7", "--size", "32", "--output"]
    assert main(args + [str(tmp_path / "a")]) == 0
    first = _tree(tmp_path / "a")
    assert main(args + [str(tmp_path / "a")]) == 0
    assert _tree(tmp_path / "a") == first
    assert sum(k.startswith("images/") for k in first) == 100
    assert "run_manifest.json" in first
    # a different output directory changes only the manifest
    assert main(args + [str(tmp_path / "b")]) == 0
    second = _tree(tmp_path / "b")
    first.pop("run_manifest.json"), second.pop("run_manifest.json")
    assert first == second


def test_train_one_epoch_via_override(tmp_path, dataset_dir):
    out = tmp_path / "run"
    code = main(["train", "--dataset", str(dataset_dir), "--output", str(out), "--seed", "1",
                 *sum((["--override", o] for o in TOY_OVERRIDES + ["epochs=1"]), [])])
    assert code == 0
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 1
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["seed"] == 1 and "epochs = 1" in manifest["config"]
    model, _ = load_checkpoint(out / "last.pt")
    assert model.config.input_size == 32


def test_train_config_file(tmp_path, dataset_dir):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("\n".join(o.replace("=", " = ") for o in TOY_OVERRIDES) + "\nepochs = 1\n# comment\n")
    assert main(["train", "--dataset", str(dataset_dir), "--output", str(tmp_path / "o"), "--config", str(cfg)]) == 0


def test_unknown_override_is_usage_error(tmp_path, dataset_dir):
    code = main(["train", "--dataset", str(dataset_dir), "--output", str(tmp_path), "--override", "epochz=1"])
    assert code == 1


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--output", "x"])
    assert exc.value.code == 1


def test_evaluate_writes_report(tmp_path, dataset_dir, checkpoint, capsys):
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--dataset", str(dataset_dir),
                 "--output", str(tmp_path)]) == 0
    text = (tmp_path / "eval_report.txt").read_text()
    assert text.startswith("# cflnet-eval-report/1") and "mean_auc" in text
    assert "mean pixel AUC" in capsys.readouterr().out


def test_evaluate_empty_dataset(tmp_path, checkpoint, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["evaluate", "--checkpoint", str(checkpoint), "--dataset", str(tmp_path / "empty"),
                 "--output", str(tmp_path / "o")])
    assert code == 2
    assert "empty dataset" in capsys.readouterr().err


def test_cross_eval_grid(tmp_path, dataset_dir, checkpoint):
    assert main(["cross-eval", "--checkpoint", f"A={checkpoint}", "--checkpoint", f"B={checkpoint}",
                 "--dataset", f"x={dataset_dir}", "--dataset", f"y={dataset_dir}", "--dataset", f"z={dataset_dir}",
                 "--output", str(tmp_path)]) == 0
    lines = (tmp_path / "cross_eval.tsv").read_text().splitlines()
    assert lines[1] == "trained_on\tx\ty\tz"
    assert [l.split("\t")[0] for l in lines[2:]] == ["A", "B"]
    assert all(len(l.split("\t")) == 4 for l in lines[2:])


def test_predict_outputs(tmp_path, checkpoint):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    Image.fromarray(img).save(tmp_path / "photo.png")
    out = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(checkpoint), "--image", str(tmp_path / "photo.png"),
                 "--output", str(out)]) == 0
    prob = np.asarray(Image.open(out / "photo_prob.png"))
    mask = np.asarray(Image.open(out / "photo_mask.png"))
    model, _ = load_checkpoint(checkpoint)
    expect = model.predict_proba(torch.from_numpy(img).permute(2, 0, 1).float()[None])[0].numpy()
    np.testing.assert_array_equal(prob, np.rint(255 * expect).astype(np.uint8))
    assert set(np.unique(mask)) <= {0, 255}
    np.testing.assert_array_equal(mask == 255, expect > 0.5)


def test_predict_unreadable_image(tmp_path, checkpoint):
    (tmp_path / "bad.png").write_bytes(b"nope")
    assert main(["predict", "--checkpoint", str(checkpoint), "--image", str(tmp_path / "bad.png"),
                 "--output", str(tmp_path / "o")]) == 2


def test_export_features(tmp_path, dataset_dir, checkpoint):
    assert main(["export-features", "--checkpoint", str(checkpoint), "--dataset", str(dataset_dir),
                 "--output", str(tmp_path)]) == 0
    rows = [l for l in (tmp_path / "mean_features.tsv").read_text().splitlines() if not l.startswith("#")]
    n_mixed = sum(s.mask.any() for s in load_dataset(dataset_dir))
    assert len(rows) == n_mixed * 2 + (4 - n_mixed)
    assert all(len(r.split("\t")) == 2 + 8 for r in rows)


def test_selftest_passes_and_is_repeatable(capsys):
    assert main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert main(["selftest"]) == 0
    assert capsys.readouterr().out == first
    assert "ALL PASS" in first


def test_selftest_catches_tau_fault(capsys):
    assert main(["selftest", "--inject-tau-fault"]) == 2
    out = capsys.readouterr().out
    assert "FAIL  supcon-vs-triple-loop" in out
