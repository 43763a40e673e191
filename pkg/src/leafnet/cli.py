"""Command-line interface: ``leafnet train|eval|sweep|gradcam|report|synth``.

Exit status: 0 success, 1 user/input error, 2 internal invariant violation.
Failures print one line ``error: <kind>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys

import numpy as np
import yaml

from . import __version__
from .augment import AugmentConfig
from .checkpoint import load_checkpoint
from .config import build_run_config, read_config, schema_keys, set_key, validate
from .data import balance_by_augmentation, load_dataset, split_dataset, synth_dataset, write_dataset
from .errors import ConfigError, LeafnetError
from .gradcam import gradcam
from .imageio import read_image_bytes
from .metrics import confusion_csv
from .training import History, best_setting, evaluate, run_kfold, sweep, sweep_csv, train

log = logging.getLogger("leafnet")


class UsageError(LeafnetError):
    pass


def _schema_epilog():
    lines = ["configuration keys (YAML or JSON file; flag > file > default):"]
    for key, desc in schema_keys():
        lines.append(f"  {key:<34} {desc}")
    return "\n".join(lines)


class _Outputs:
    """Track files a command creates so a failure can remove them."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.created_dir = not os.path.exists(out_dir)
        self.before = set(os.listdir(out_dir)) if not self.created_dir else set()
        os.makedirs(out_dir, exist_ok=True)

    def rollback(self):
        if self.created_dir:
            shutil.rmtree(self.out_dir, ignore_errors=True)
            return
        for name in set(os.listdir(self.out_dir)) - self.before:
            path = os.path.join(self.out_dir, name)
            if os.path.isdir(path):
                shutil.rmtree(path, ignore_errors=True)
            else:
                os.remove(path)


def _dataset(doc):
    data = doc.get("data", {})
    if "synthetic" in data:
        s = data["synthetic"]
        return synth_dataset(s.get("classes", 3), s.get("per_class", 10), tuple(s.get("size", (32, 32))), s.get("seed", 0))
    if "root" not in data:
        raise ConfigError("either data.root or data.synthetic must be set")
    return load_dataset(data["root"])


def _prepare(args, overrides):
    doc = read_config(args.config)
    for key, value in overrides.items():
        if value is not None:
            set_key(doc, key, value)
    doc = validate(doc)
    root = doc.get("data", {}).get("root")
    if root is not None and not os.path.isabs(root):
        # relative data roots are taken from the config file's directory
        doc["data"]["root"] = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(args.config)), root))
    ds = _dataset(doc)
    run = build_run_config(doc, num_classes=ds.num_classes)
    if run.balance:
        acfg = run.train.augment or AugmentConfig(seed=run.train.seed)
        ds = balance_by_augmentation(ds, acfg)
    return doc, run, ds


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_train(args):
    from .report import plot_confusion, write_run_artifacts

    doc, run, ds = _prepare(args, {"train.seed": args.seed, "train.epochs": args.epochs, "output.dir": args.out})
    outputs = _Outputs(run.out_dir)
    try:
        cfg = run.train
        if cfg.kfold:
            kf = run_kfold(cfg, ds)
            summary = {
                "k": cfg.kfold,
                "aggregate": kf.aggregate,
                "folds": [{"epochs": len(h), "report": r.to_dict()} for h, r in kf.folds],
            }
            _write(os.path.join(run.out_dir, "kfold.json"), json.dumps(summary, indent=2))
            for f, (h, _) in enumerate(kf.folds):
                _write(os.path.join(run.out_dir, f"fold{f}_history.csv"), h.to_csv())
        result = train(cfg, ds)
        write_run_artifacts(result, run.out_dir)
        _write(os.path.join(run.out_dir, "config.yaml"), yaml.safe_dump(doc, sort_keys=True))
        if len(result.split.test):
            ev = evaluate(result.best, ds, result.split.test)
            _write(os.path.join(run.out_dir, "test_report.json"), ev.report.to_json())
            _write(os.path.join(run.out_dir, "test_confusion.csv"), confusion_csv(ev.confusion, ds.class_names))
            plot_confusion(ev.confusion, ds.class_names, os.path.join(run.out_dir, "test_confusion.svg"))
    except BaseException:
        outputs.rollback()
        raise
    last = result.history[-1]
    print(f"trained {cfg.model.name} for {len(result.history)} epochs: train_acc={last.train_acc:.4f} "
          f"val_acc={last.val_acc:.4f}; artifacts in {run.out_dir}")
    return 0


def _split_indices(ckpt, ds, which):
    if which == "all":
        return np.arange(len(ds))
    conf = ckpt.config or {}
    split = split_dataset(ds, tuple(conf.get("split", (0.8, 0.1, 0.1))), conf.get("seed", 0))
    return {"train": split.train, "val": split.val, "test": split.test}[which]


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if len(ckpt.class_names) != ds.num_classes or ckpt.spec.num_classes != ds.num_classes:
        raise UsageError(f"checkpoint has {ckpt.spec.num_classes} classes, data has {ds.num_classes}")
    idx = _split_indices(ckpt, ds, args.split)
    if len(idx) == 0:
        raise UsageError(f"split {args.split!r} is empty for this dataset")
    ev = evaluate(ckpt, ds, idx)
    if args.format == "json":
        payload = ev.report.to_dict()
        payload["confusion_matrix"] = ev.confusion.tolist()
        payload["loss"] = ev.loss
        text = json.dumps(payload, indent=2) + "\n"
    elif args.format == "csv":
        text = confusion_csv(ev.confusion, ds.class_names)
    else:
        text = ev.report.to_text() + "\nconfusion matrix (rows true, columns predicted):\n" + "\n".join(
            " ".join(f"{int(v):>6d}" for v in row) for row in ev.confusion) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _read_grid(path):
    try:
        with open(path) as fh:
            grid = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read grid {path}: {exc.strerror}") from None
    if not isinstance(grid, dict):
        raise ConfigError("grid file must map optimizer/lr/batch_size to lists")
    return {k: (v if isinstance(v, list) else [v]) for k, v in grid.items()}


def cmd_sweep(args):
    from .report import plot_sweep

    grid = _read_grid(args.grid)
    doc, run, ds = _prepare(args, {"output.dir": args.out})
    outputs = _Outputs(run.out_dir)
    try:
        rows, _ = sweep(run.train, grid, ds, out_dir=run.out_dir, jobs=args.jobs)
        _write(os.path.join(run.out_dir, "sweep.csv"), sweep_csv(rows))
        plot_sweep(rows, os.path.join(run.out_dir, "sweep.svg"))
    except BaseException:
        outputs.rollback()
        raise
    ok = [r for r in rows if r.status == "ok"]
    best = best_setting(rows)
    print(f"{len(ok)}/{len(rows)} cells succeeded" + (f"; best: {best.setting} (val_acc={best.val_acc:.4f})" if best else ""))
    return 0 if ok else 1


def cmd_gradcam(args):
    from .data import normalize_pixels
    from .report import write_heatmap_pgm, write_overlay

    ckpt = load_checkpoint(args.checkpoint)
    image = normalize_pixels(read_image_bytes(args.image))
    graph = ckpt.graph()
    k = args.class_index
    if k is not None and not 0 <= k < ckpt.spec.num_classes:
        raise UsageError(f"class {k} out of range for {ckpt.spec.num_classes} classes")
    heat = gradcam(graph, image, k, args.layer)
    probs = graph.activations[graph.output][0]
    pred = int(np.argmax(probs))
    outputs = _Outputs(args.out)
    try:
        write_heatmap_pgm(heat, os.path.join(args.out, "heatmap.pgm"))
        write_overlay(heat, image, os.path.join(args.out, "overlay.png"))
        _write(os.path.join(args.out, "gradcam.json"), json.dumps({
            "predicted_class": pred,
            "predicted_name": ckpt.class_names[pred] if ckpt.class_names else str(pred),
            "probability": float(probs[pred]),
            "target_class": heat.target_class,
            "layer": heat.layer,
            "differentiated": heat.differentiated,
        }, indent=2))
    except BaseException:
        outputs.rollback()
        raise
    name = ckpt.class_names[pred] if ckpt.class_names else str(pred)
    print(f"predicted class {pred} ({name}) probability {float(probs[pred]):.6f}")
    return 0


def cmd_report(args):
    from .report import plot_curves

    path = os.path.join(args.run, "history.csv")
    if not os.path.isfile(path):
        raise UsageError(f"no history.csv in {args.run}")
    with open(path) as fh:
        history = History.from_csv(fh.read())
    out = plot_curves(history, os.path.join(args.run, "curves.svg"))
    print(out)
    return 0


def cmd_synth(args):
    ds = synth_dataset(args.classes, args.per_class, (args.size, args.size), args.seed)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} images in {ds.num_classes} classes to {args.out}")
    return 0


def build_parser():
    epilog = _schema_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="leafnet", description="Train, evaluate and explain leaf/seed image classifiers.",
                                     epilog=epilog, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"leafnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file", epilog=epilog, formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="classification report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="class-folder data root")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--format", choices=("json", "text", "csv"), default="text")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid sweep over optimizer, lr and batch_size", epilog=epilog, formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="YAML/JSON mapping of optimizer/lr/batch_size to lists")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcam", help="Grad-CAM heat map for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int)
    p.add_argument("--layer", help="node id to tap (default: last convolution block)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("report", help="re-render curves.svg from a run directory")
    p.add_argument("run")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic PPM class-folder dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def _fail(kind, exc):
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error: {kind}: {msg}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except LeafnetError as exc:
        _fail(exc.__class__.__name__, exc)
        return 1
    except (OSError, ValueError) as exc:
        _fail(exc.__class__.__name__, exc)
        return 1
    except Exception as exc:  # invariant violations and bugs
        _fail("internal", f"{exc.__class__.__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
