"""Training loop, evaluation, k-fold driver and hyperparameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import augment as aug
from .checkpoint import Checkpoint
from .data import Split, batch_iter, kfold_split, split_dataset
from .errors import LeafnetError, TrainingDivergedError
from .layers import Graph, cross_entropy_loss
from .metrics import classification_report, confusion_matrix
from .models import ModelSpec, build_model, prepare_inputs
from .optim import OptimizerState, Schedule

log = logging.getLogger(__name__)

MONITORS = ("val_loss", "val_accuracy")
SWEEP_KEYS = ("optimizer", "lr", "batch_size")
HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "seconds")


@dataclass
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho: float = 0.9
    schedule: str = "constant"
    lr_min: float = 0.0
    batch_size: int = 32
    epochs: int = 100
    monitor: str = "val_loss"
    patience: int = 3
    early_stopping: bool = True
    augment: aug.AugmentConfig = None
    split: tuple = (0.8, 0.1, 0.1)
    kfold: int = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must all be >= 1")
        if self.monitor not in MONITORS:
            raise ValueError(f"monitor must be one of {MONITORS}")
        self.split = tuple(self.split)

    def make_optimizer(self):
        return OptimizerState(self.optimizer, self.lr, self.beta1, self.beta2, self.eps, self.rho,
                              self.momentum, self.weight_decay)

    def make_schedule(self):
        kind = "cosine_annealing" if self.schedule in ("cosine", "cosine_annealing") else self.schedule
        return Schedule(kind, self.lr, min(self.lr_min, self.lr), self.epochs)

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = ModelSpec.from_dict(d["model"])
        if d.get("augment") is not None:
            d["augment"] = aug.AugmentConfig(**d["augment"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    seconds: float


class History(list):
    """List of :class:`EpochRecord`, one per completed epoch."""

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_FIELDS)
        for r in self:
            writer.writerow([r.epoch] + [repr(float(getattr(r, f))) for f in HISTORY_FIELDS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = csv.DictReader(io.StringIO(text))
        return cls(EpochRecord(int(r["epoch"]), *(float(r[f]) for f in HISTORY_FIELDS[1:])) for r in rows)

    def column(self, name):
        return [getattr(r, name) for r in self]


class EarlyStopping:
    """Stop once the monitored value fails to improve ``patience`` epochs in a row."""

    def __init__(self, monitor="val_loss", patience=3):
        self.mode = "max" if monitor.endswith("accuracy") or monitor.endswith("acc") else "min"
        self.patience = patience
        self.best = None
        self.best_epoch = None
        self.wait = 0

    def improved(self, value):
        if math.isnan(value):
            return False
        if self.best is None:
            return True
        return value > self.best if self.mode == "max" else value < self.best

    def update(self, epoch, value):
        """Record ``value``; returns ``(improved, stop)``."""
        if self.improved(value):
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: History
    stopped_epoch: int = None
    optimizer_steps: int = 0
    split: Split = None

    def __iter__(self):
        # allows ``best, history = train(...)``
        return iter((self.best, self.history))


@dataclass
class EvalResult:
    confusion: np.ndarray
    report: object
    loss: float
    y_true: np.ndarray
    y_pred: np.ndarray
    probs: np.ndarray

    def __iter__(self):
        return iter((self.confusion, self.report, self.loss))


class _Feeder:
    """Turns dataset indices into graph inputs, caching un-augmented resizes."""

    def __init__(self, graph, ds):
        self.graph = graph
        self.ds = ds
        self._cache = {}

    def plain(self, indices):
        feeds = {}
        for node in self.graph.input_nodes:
            _, h, w = node.hyper["shape"]
            rows = []
            for i in indices:
                key = (int(i), node.id)
                if key not in self._cache:
                    img = self.ds.images[i]
                    self._cache[key] = img if img.shape[1:] == (h, w) else aug.resize(img, (h, w))
                rows.append(self._cache[key])
            feeds[node.id] = np.stack(rows)
        return feeds

    def augmented(self, indices, cfg, epoch):
        images = [aug.augment_sample(self.ds.images[i], cfg, aug.sample_rng(cfg.seed, epoch, int(i))) for i in indices]
        return prepare_inputs(self.graph, images)


def _check_classes(graph, ds):
    k = graph.shapes[graph.output][0]
    if k != ds.num_classes:
        raise LeafnetError(f"model predicts {k} classes but the dataset has {ds.num_classes}")


def predict(graph, ds, indices=None, batch_size=64, feeder=None):
    """Inference-mode probabilities for ``indices`` (all samples by default)."""
    indices = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    feeder = feeder or _Feeder(graph, ds)
    out = [graph.forward(feeder.plain(b), mode="infer") for b in batch_iter(indices, batch_size, shuffle=False)]
    k = graph.shapes[graph.output][0]
    return np.concatenate(out) if out else np.zeros((0, k))


def evaluate(model, ds, indices=None, batch_size=64, feeder=None):
    """Confusion matrix, report and mean loss of ``model`` (Graph or Checkpoint)."""
    graph = model.graph() if isinstance(model, Checkpoint) else model
    _check_classes(graph, ds)
    indices = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    probs = predict(graph, ds, indices, batch_size, feeder)
    y_true = ds.labels[indices]
    y_pred = np.argmax(probs, axis=1) if len(probs) else np.zeros(0, dtype=np.int64)
    cm = confusion_matrix(y_true, y_pred, ds.num_classes)
    if len(indices) == 0:
        return EvalResult(cm, None, float("nan"), y_true, y_pred, probs)
    loss, _ = cross_entropy_loss(probs, y_true)
    return EvalResult(cm, classification_report(cm, ds.class_names), loss, y_true, y_pred, probs)


def train(cfg, ds, split=None, callback=None):
    """Train ``cfg.model`` on ``ds``.

    ``callback(epoch, record, graph)`` runs after every epoch; returning True
    stops training.  When the validation set is empty the monitor falls back
    to the matching training metric.
    """
    split = split or split_dataset(ds, cfg.split, cfg.seed)
    graph = build_model(cfg.model)
    graph.rng = aug.sample_rng(cfg.seed, "dropout")
    _check_classes(graph, ds)
    opt = cfg.make_optimizer()
    sched = cfg.make_schedule()
    stopper = EarlyStopping(cfg.monitor, cfg.patience)
    feeder = _Feeder(graph, ds)
    history = History()
    best = None
    stopped = None
    config_echo = cfg.to_dict()
    train_idx = split.train
    if len(train_idx) == 0:
        raise LeafnetError("training split is empty")

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        lr_t = sched.rate(epoch - 1)
        total_loss = 0.0
        correct = 0
        batches = batch_iter(train_idx, cfg.batch_size, seed=aug.sample_rng(cfg.seed, "shuffle", epoch).integers(2**63))
        for b, idx in enumerate(batches, start=1):
            feeds = feeder.augmented(idx, cfg.augment, epoch) if cfg.augment else feeder.plain(idx)
            labels = ds.labels[idx]
            try:
                with np.errstate(over="raise", invalid="raise"):
                    probs = graph.forward(feeds, mode="train")
                    loss, dlogits = cross_entropy_loss(probs, labels)
                    if not math.isfinite(loss):
                        raise TrainingDivergedError(epoch, b, loss)
                    grads = graph.backward(dlogits, from_logits=True)
                    opt.step(graph.parameters(), grads, lr_t)
            except FloatingPointError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == labels))
        n = len(train_idx)
        val = evaluate(graph, ds, split.val, feeder=feeder) if len(split.val) else None
        val_loss = val.loss if val else float("nan")
        val_acc = val.report.accuracy if val else float("nan")
        record = EpochRecord(epoch, total_loss / n, correct / n, val_loss, val_acc, lr_t, time.monotonic() - t0)
        history.append(record)
        if val is not None:
            value = val_loss if cfg.monitor == "val_loss" else val_acc
        else:
            value = record.train_loss if cfg.monitor == "val_loss" else record.train_acc
        improved, stop = stopper.update(epoch, value)
        if improved or best is None:
            best = Checkpoint.capture(graph, cfg.model, ds.class_names, epoch, opt, config_echo)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f", epoch, record.train_loss,
                 record.train_acc, val_loss, val_acc)
        if callback is not None and callback(epoch, record, graph):
            stopped = epoch
            break
        if cfg.early_stopping and stop and epoch < cfg.epochs:
            stopped = epoch
            break
    final = Checkpoint.capture(graph, cfg.model, ds.class_names, history[-1].epoch, opt, config_echo)
    return TrainResult(best, final, history, stopped, opt.t, split)


def restore_optimizer(ckpt):
    """Rebuild the OptimizerState stored in a checkpoint."""
    hyper = {k: v for k, v in ckpt.optimizer.items() if k != "t"}
    opt = OptimizerState(**hyper)
    opt.t = int(ckpt.optimizer.get("t", 0))
    opt.slots = {s: {k: v.copy() for k, v in d.items()} for s, d in ckpt.optimizer_slots.items()}
    return opt


def derive_seed(seed, *keys):
    return int(aug.sample_rng(seed, *keys).integers(2**31 - 1))


@dataclass
class KFoldResult:
    folds: list
    aggregate: dict


def aggregate_reports(reports):
    """Mean and population standard deviation of the headline metrics."""
    values = {
        "accuracy": [r.accuracy for r in reports],
        "macro_precision": [r.macro["precision"] for r in reports],
        "macro_recall": [r.macro["recall"] for r in reports],
        "macro_f1": [r.macro["f1-score"] for r in reports],
        "weighted_f1": [r.weighted["f1-score"] for r in reports],
    }
    return {k: {"mean": float(np.mean(v)), "std": float(np.std(v))} for k, v in values.items()}


def run_kfold(cfg, ds, k=None):
    k = k or cfg.kfold
    if not k:
        raise LeafnetError("k-fold run requested without a fold count")
    folds = []
    for f, (tr, va) in enumerate(kfold_split(ds, k, cfg.seed)):
        fold_seed = derive_seed(cfg.seed, "fold", f)
        fold_cfg = replace(cfg, seed=fold_seed, model=replace(cfg.model, seed=fold_seed))
        try:
            result = train(fold_cfg, ds, Split(tr, va, np.zeros(0, dtype=np.int64)))
            report = evaluate(result.best, ds, va).report
        except LeafnetError as exc:
            raise LeafnetError(f"fold {f}: {exc}") from exc
        folds.append((result.history, report))
    return KFoldResult(folds, aggregate_reports([r for _, r in folds]))


@dataclass
class SweepRow:
    setting: str
    optimizer: str
    lr: float
    batch_size: int
    train_acc: float = float("nan")
    val_acc: float = float("nan")
    train_loss: float = float("nan")
    val_loss: float = float("nan")
    epoch_time: float = float("nan")
    status: str = "ok"
    error: str = ""


SWEEP_FIELDS = tuple(SweepRow.__dataclass_fields__)


def expand_grid(grid):
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise LeafnetError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
    keys = [k for k in SWEEP_KEYS if k in grid]
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise LeafnetError("sweep grid is empty")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _run_cell(base, cell, ds, out_dir, index):
    cfg = replace(base, **cell)
    setting = ", ".join(f"{k}={v}" for k, v in cell.items())
    row = SweepRow(setting, cfg.optimizer, cfg.lr, cfg.batch_size)
    try:
        result = train(cfg, ds)
    except (LeafnetError, ValueError, FloatingPointError) as exc:
        row.status, row.error = "FAILED", str(exc)
        return row, None
    last = result.history[-1]
    row.train_acc, row.val_acc = last.train_acc, last.val_acc
    row.train_loss, row.val_loss = last.train_loss, last.val_loss
    row.epoch_time = statistics.median(result.history.column("seconds"))
    if out_dir is not None:
        from .report import write_run_artifacts

        slug = "_".join(f"{k}-{v}" for k, v in cell.items())
        write_run_artifacts(result, os.path.join(out_dir, f"cell{index:02d}_{slug}"))
    return row, result


def sweep(base, grid, ds, out_dir=None, jobs=1):
    """Train one model per grid cell, everything else fixed; returns SweepRow list."""
    cells = expand_grid(grid)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, base, c, ds, out_dir, i) for i, c in enumerate(cells)]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_cell(base, c, ds, out_dir, i) for i, c in enumerate(cells)]
    return [row for row, _ in outcomes], [res for _, res in outcomes]


def best_setting(rows):
    """Highest validation accuracy among successful rows (first wins ties)."""
    ok = [r for r in rows if r.status == "ok"]
    if not ok:
        return None
    return sorted(ok, key=lambda r: -r.val_acc if not math.isnan(r.val_acc) else math.inf)[0]


def sweep_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_FIELDS)
    for r in rows:
        writer.writerow([getattr(r, f) for f in SWEEP_FIELDS])
    return buf.getvalue()
