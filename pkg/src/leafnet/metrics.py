"""Confusion matrices and precision/recall/F1 reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LeafnetError


def confusion_matrix(y_true, y_pred, num_classes):
    """``cm[i, j]`` counts samples of true class i predicted as class j."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays differ in length")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} label outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num, den):
    """num/den with 0/0 -> 0; returns (values, undefined mask)."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    undefined = den == 0
    return np.divide(num, den, out=np.zeros_like(num), where=~undefined), undefined


@dataclass
class Report:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro: dict
    weighted: dict
    class_names: list = None
    # (metric, class index) pairs that were 0/0 and reported as 0
    undefined: list = field(default_factory=list)

    def to_dict(self):
        names = self.class_names or [str(i) for i in range(len(self.support))]
        return {
            "classes": {
                n: {"precision": float(p), "recall": float(r), "f1-score": float(f), "support": int(s)}
                for n, p, r, f, s in zip(names, self.precision, self.recall, self.f1, self.support)
            },
            "accuracy": float(self.accuracy),
            "macro avg": {k: float(v) for k, v in self.macro.items()},
            "weighted avg": {k: float(v) for k, v in self.weighted.items()},
            "support": int(self.support.sum()),
            "undefined": [list(u) for u in self.undefined],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self, digits=4):
        names = self.class_names or [str(i) for i in range(len(self.support))]
        width = max(len("weighted avg"), *(len(n) for n in names))
        head = f"{'':>{width}} {'precision':>10} {'recall':>10} {'f1-score':>10} {'support':>10}"
        fmt = lambda v: f"{v:>10.{digits}f}"
        lines = [head, ""]
        for n, p, r, f, s in zip(names, self.precision, self.recall, self.f1, self.support):
            lines.append(f"{n:>{width}} {fmt(p)} {fmt(r)} {fmt(f)} {int(s):>10d}")
        total = int(self.support.sum())
        lines.append("")
        lines.append(f"{'accuracy':>{width}} {'':>10} {'':>10} {fmt(self.accuracy)} {total:>10d}")
        for label, avg in (("macro avg", self.macro), ("weighted avg", self.weighted)):
            lines.append(f"{label:>{width}} {fmt(avg['precision'])} {fmt(avg['recall'])} {fmt(avg['f1-score'])} {total:>10d}")
        return "\n".join(lines) + "\n"


def classification_report(cm, class_names=None):
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise LeafnetError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    total = cm.sum()
    if total == 0:
        raise LeafnetError("confusion matrix holds no samples")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision, p_undef = _ratio(tp, predicted)
    recall, r_undef = _ratio(tp, support)
    f1, f_undef = _ratio(2 * precision * recall, precision + recall)
    undefined = [(m, int(i)) for m, mask in (("precision", p_undef), ("recall", r_undef), ("f1-score", f_undef))
                 for i in np.flatnonzero(mask)]
    w = support / total
    macro = {"precision": precision.mean(), "recall": recall.mean(), "f1-score": f1.mean()}
    weighted = {"precision": precision @ w, "recall": recall @ w, "f1-score": f1 @ w}
    return Report(precision, recall, f1, support, float(tp.sum() / total), macro, weighted,
                  list(class_names) if class_names is not None else None, undefined)


def confusion_csv(cm, class_names=None):
    """CSV with a header row of predicted classes, then one row per true class."""
    cm = np.asarray(cm)
    names = list(class_names) if class_names is not None else [str(i) for i in range(len(cm))]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\pred", *names])
    for name, row in zip(names, cm):
        writer.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()
