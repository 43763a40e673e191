"""Figures and on-disk run artifacts.

Plots are rendered with matplotlib's Agg backend next to the delimited
outputs (CSV/JSON) they visualise.  SVG output is made reproducible by
fixing the hash salt and dropping the date stamp.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import augment  # noqa: E402
from .checkpoint import save_checkpoint  # noqa: E402
from .imageio import write_pnm  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "leafnet",
    "svg.fonttype": "path",
}
_METADATA = {"svg": {"Date": None}, "png": {"Software": None}}

RUN_ARTIFACTS = ("history.csv", "best.ckpt", "final.ckpt", "manifest.json", "curves.svg")


def _save(fig, path):
    fmt = os.path.splitext(path)[1].lstrip(".").lower() or "svg"
    fig.savefig(path, format=fmt, metadata=_METADATA.get(fmt), bbox_inches="tight")
    plt.close(fig)
    return path


def plot_curves(history, path):
    """Accuracy and loss against epoch, training and validation side by side."""
    epochs = history.column("epoch")
    with plt.rc_context(STYLE):
        fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax_acc.plot(epochs, history.column("train_acc"), label="train", marker="o", ms=2)
        ax_acc.plot(epochs, history.column("val_acc"), label="validation", marker="o", ms=2)
        ax_acc.set(xlabel="epoch", ylabel="accuracy", title="Accuracy", ylim=(-0.02, 1.02))
        ax_loss.plot(epochs, history.column("train_loss"), label="train", marker="o", ms=2)
        ax_loss.plot(epochs, history.column("val_loss"), label="validation", marker="o", ms=2)
        ax_loss.set(xlabel="epoch", ylabel="loss", title="Loss")
        for ax in (ax_acc, ax_loss):
            ax.legend(frameon=False)
            ax.grid(alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)


def plot_confusion(cm, class_names, path):
    cm = np.asarray(cm)
    with plt.rc_context(STYLE):
        size = max(3.0, 0.6 * len(cm) + 1.5)
        fig, ax = plt.subplots(figsize=(size, size))
        ax.imshow(cm, cmap="Blues")
        ticks = np.arange(len(cm))
        ax.set_xticks(ticks, class_names, rotation=45, ha="right")
        ax.set_yticks(ticks, class_names)
        ax.set(xlabel="predicted", ylabel="true", title="Confusion matrix")
        threshold = cm.max() / 2 if cm.size else 0
        for i in range(len(cm)):
            for j in range(len(cm)):
                ax.text(j, i, int(cm[i, j]), ha="center", va="center",
                        color="white" if cm[i, j] > threshold else "black")
        fig.tight_layout()
        return _save(fig, path)


def plot_sweep(rows, path):
    """Bar chart of train/validation accuracy per sweep cell."""
    ok = [r for r in rows if r.status == "ok"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2), 3.2))
        x = np.arange(len(ok))
        ax.bar(x - 0.2, [r.train_acc for r in ok], width=0.4, label="train")
        ax.bar(x + 0.2, [r.val_acc for r in ok], width=0.4, label="validation")
        ax.set_xticks(x, [r.setting for r in ok], rotation=30, ha="right")
        ax.set(ylabel="accuracy", ylim=(0, 1.05), title="Sweep")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def write_heatmap_pgm(heatmap, path):
    pixels = np.clip(np.rint(heatmap.values * 255.0), 0, 255).astype(np.uint8)[None]
    write_pnm(path, pixels)
    return path


def write_overlay(heatmap, image, path, alpha=0.45):
    """Heat map upsampled to the image size and blended over it (red = important)."""
    _, h, w = image.shape
    up = augment.resize(heatmap.values[None], (h, w))[0]
    rgb = np.transpose(image[:3] if image.shape[0] >= 3 else np.repeat(image, 3, axis=0), (1, 2, 0))
    colored = plt.get_cmap("jet")(up)[..., :3]
    blend = np.clip((1 - alpha) * rgb + alpha * colored, 0.0, 1.0)
    plt.imsave(path, blend, metadata=_METADATA["png"])
    return path


def write_run_artifacts(result, out_dir):
    """Write the five per-run artifacts of a training result into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "history.csv"), "w") as fh:
        fh.write(result.history.to_csv())
    save_checkpoint(result.best, os.path.join(out_dir, "best.ckpt"))
    save_checkpoint(result.final, os.path.join(out_dir, "final.ckpt"))
    manifest = dict(result.final.manifest)
    manifest["best_epoch"] = result.best.epoch
    manifest["stopped_epoch"] = result.stopped_epoch
    manifest["optimizer_steps"] = result.optimizer_steps
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    plot_curves(result.history, os.path.join(out_dir, "curves.svg"))
    return [os.path.join(out_dir, name) for name in RUN_ARTIFACTS]
