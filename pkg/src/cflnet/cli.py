"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

import cflnet
from cflnet.config import dump_config, load_config

log = logging.getLogger("cflnet")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def code_version():
    """Package version plus a digest of the package sources."""
    digest = hashlib.sha256()
    for path in sorted(Path(cflnet.__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return f"{cflnet.__version__}+{digest.hexdigest()[:12]}"


def write_manifest(out_dir, command, args, cfg=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                 if k not in ("func",)},
        "seed": getattr(args, "seed", None) if cfg is None else cfg.seed,
        "code_version": code_version(),
        "config": dump_config(cfg) if cfg is not None else None,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config(args):
    try:
        cfg = load_config(args.config, args.override or ())
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _named(pairs, what):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"{what} must be given as NAME=PATH, got {pair!r}")
        name, path = pair.split("=", 1)
        out[name] = Path(path)
    return out


def _load(dataset, split):
    from cflnet.data import load_dataset

    if not (Path(dataset) / "images").is_dir():
        raise RuntimeError(f"empty dataset: {dataset} has no images/ directory")
    samples = load_dataset(dataset, split)
    if len(samples) == 0:
        raise RuntimeError(f"empty dataset: {dataset}")
    return samples


def cmd_train(args):
    from cflnet.train import train

    cfg = _config(args)
    write_manifest(args.output, "train", args, cfg)
    data = _load(args.dataset, args.split)
    val = _load(args.dataset, args.val_split) if args.val_split else None
    _, history = train(None, data, cfg, val_dataset=val, out_dir=args.output)
    last = history[-1]
    print(f"trained {len(history)} epoch(s), {last['step']} step(s); final total loss {last['total']:.4f}")


def cmd_evaluate(args):
    from cflnet.metrics import evaluate_model
    from cflnet.model import load_checkpoint

    write_manifest(args.output, "evaluate", args)
    model, _ = load_checkpoint(args.checkpoint)
    report = evaluate_model(model, _load(args.dataset, args.split))
    (args.output / "eval_report.txt").write_text(report.to_text())
    print(f"mean pixel AUC {report.mean_auc:.4f} over {len(report.per_image_auc)} image(s); "
          f"skipped {report.skipped} single-class image(s)")


def cmd_cross_eval(args):
    from cflnet.metrics import cross_dataset_eval

    write_manifest(args.output, "cross-eval", args)
    checkpoints = _named(args.checkpoint, "--checkpoint")
    datasets = {name: _load(path, args.split) for name, path in _named(args.dataset, "--dataset").items()}
    if not checkpoints or not datasets:
        raise UsageError("cross-eval needs at least one --checkpoint NAME=PATH and one --dataset NAME=DIR")
    rows, cols, grid = cross_dataset_eval(checkpoints, datasets)
    lines = ["# cflnet-cross-eval/1", "trained_on\t" + "\t".join(cols)]
    lines += [r + "\t" + "\t".join(f"{v:.6f}" for v in row) for r, row in zip(rows, grid)]
    text = "\n".join(lines) + "\n"
    (args.output / "cross_eval.tsv").write_text(text)
    print(text, end="")


def cmd_predict(args):
    from cflnet.model import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    write_manifest(args.output, "predict", args)
    size = model.config.input_size
    for path in args.image:
        path = Path(path)
        try:
            with Image.open(path) as im:
                rgb = im.convert("RGB")
        except OSError as exc:
            raise RuntimeError(f"cannot read image {path}: {exc}") from exc
        x = torch.tensor(np.asarray(rgb)).permute(2, 0, 1).float()[None]
        if x.shape[-2:] != (size, size):
            x = torch.nn.functional.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
        prob = model.predict_proba(x)[None]
        if prob.shape[-2:] != (rgb.height, rgb.width):
            prob = torch.nn.functional.interpolate(prob, size=(rgb.height, rgb.width), mode="bilinear",
                                                   align_corners=False)
        prob = prob[0, 0].numpy()
        Image.fromarray(np.rint(255 * prob).astype(np.uint8)).save(args.output / f"{path.stem}_prob.png")
        Image.fromarray(np.where(prob > 0.5, 255, 0).astype(np.uint8)).save(args.output / f"{path.stem}_mask.png")
        print(f"{path.stem}: tampered fraction {float((prob > 0.5).mean()):.3f}")


def cmd_synth(args):
    from cflnet.data import FORGERY_OPS, synth_dataset, write_dataset

    ops = tuple(args.ops.split(",")) if args.ops else FORGERY_OPS
    if any(op not in FORGERY_OPS for op in ops):
        raise UsageError(f"--ops must be drawn from {FORGERY_OPS}")
    seed = 0 if args.seed is None else args.seed
    write_manifest(args.output, "synth", args)
    samples = synth_dataset(args.count, seed=seed, size=args.size, ops=ops)
    write_dataset(samples, args.output, split="all")
    print(f"wrote {len(samples)} samples to {args.output}")


def cmd_export_features(args):
    from cflnet.metrics import export_mean_features
    from cflnet.model import load_checkpoint

    write_manifest(args.output, "export-features", args)
    model, _ = load_checkpoint(args.checkpoint)
    rows = export_mean_features(model, _load(args.dataset, args.split), args.output / "mean_features.tsv")
    print(f"wrote {len(rows)} feature row(s)")


def cmd_selftest(args):
    from cflnet.selftest import run_selftest

    ok, lines = run_selftest(seed=0 if args.seed is None else args.seed,
                             tau_scale=1.5 if args.inject_tau_fault else 1.0)
    if args.output is not None:
        write_manifest(args.output, "selftest", args)
        (args.output / "selftest.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser():
    parser = _Parser(prog="cflnet", description="Forgery localization with a contrastive two-stream network.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, output_required=True):
        p.add_argument("--output", type=Path, required=output_required, help="directory for all outputs")
        p.add_argument("--seed", type=int)

    def dataset_args(p):
        p.add_argument("--dataset", type=Path, required=True)
        p.add_argument("--split", help="split manifest name (default: all images)")

    p = sub.add_parser("train", help="train a model")
    common(p)
    dataset_args(p)
    p.add_argument("--config", type=Path)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--val-split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-image pixel AUC on a dataset")
    common(p)
    dataset_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cross-eval", help="train-set x eval-set AUC grid")
    common(p)
    p.add_argument("--checkpoint", action="append", metavar="NAME=PATH")
    p.add_argument("--dataset", action="append", metavar="NAME=DIR")
    p.add_argument("--split")
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("predict", help="write probability and mask PNGs")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", action="append", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic forgery dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--ops", help="comma-separated subset of splice,copymove,removal")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-features", help="per-image class-mean head features")
    common(p)
    dataset_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("selftest", help="run the oracle cross-checks")
    common(p, output_required=False)
    p.add_argument("--inject-tau-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"cflnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"cflnet: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
