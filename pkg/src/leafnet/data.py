"""Datasets, stratified split protocols, batching and synthetic fixtures."""

from __future__ import annotations

import csv
import colorsys
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from .errors import DataError
from .imageio import read_image_bytes, supported_suffixes, to_bytes, write_pnm

log = logging.getLogger(__name__)

# guards floor() against products like 0.29 * 100 = 28.999999999999996
_FLOOR_EPS = 1e-9


@dataclass
class Dataset:
    """Labelled images; ``images[i]`` is a float (C, H, W) array in [0, 1]."""

    images: list
    labels: np.ndarray
    class_names: list
    paths: list = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError("images and labels differ in length")
        if self.paths is None:
            self.paths = [None] * len(self.images)
        k = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
            raise DataError(f"class index outside [0, {k})")

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def samples(self):
        return [(p if p is not None else i, int(y)) for i, (p, y) in enumerate(zip(self.paths, self.labels))]

    def class_indices(self, c):
        return np.flatnonzero(self.labels == c)

    def subset(self, indices):
        indices = list(indices)
        return Dataset([self.images[i] for i in indices], self.labels[indices], list(self.class_names),
                       [self.paths[i] for i in indices])


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def normalize_pixels(raw):
    return np.asarray(raw, dtype=np.float64) / 255.0


def one_hot(k, num_classes):
    if not 0 <= k < num_classes:
        raise IndexError(f"class {k} out of range for {num_classes} classes")
    v = np.zeros(num_classes)
    v[k] = 1.0
    return v


def _bytes_sorted(names):
    return sorted(names, key=lambda s: s.encode("utf-8"))


def load_dataset(root):
    """Load ``root/<class>/<image>`` (or ``root/manifest.csv`` with ``path,class``)."""
    if not os.path.isdir(root):
        raise DataError(f"data root {root} is not a directory")
    manifest = os.path.join(root, "manifest.csv")
    entries = []
    if os.path.isfile(manifest):
        with open(manifest, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "class"} <= set(reader.fieldnames):
                raise DataError(f"{manifest}: header must be 'path,class'")
            for row in reader:
                entries.append((os.path.join(root, row["path"]), row["class"]))
        class_names = _bytes_sorted({c for _, c in entries})
    else:
        class_names = _bytes_sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
        suffixes = supported_suffixes()
        for name in class_names:
            folder = os.path.join(root, name)
            files = _bytes_sorted(f for f in os.listdir(folder) if f.lower().endswith(suffixes))
            if not files:
                log.warning("class folder %s holds no images; keeping class with count 0", folder)
            entries.extend((os.path.join(folder, f), name) for f in files)
    if not class_names:
        raise DataError(f"no classes found under {root}")
    entries.sort(key=lambda e: (class_names.index(e[1]), e[0].encode("utf-8")))
    lookup = {c: i for i, c in enumerate(class_names)}
    images = [normalize_pixels(read_image_bytes(p)) for p, _ in entries]
    return Dataset(images, [lookup[c] for _, c in entries], class_names, [p for p, _ in entries])


def write_dataset(ds, root):
    """Write ``ds`` as a PPM class-folder tree (the layout ``load_dataset`` reads)."""
    for name in ds.class_names:
        os.makedirs(os.path.join(root, name), exist_ok=True)
    seen = {}
    for img, y in zip(ds.images, ds.labels):
        name = ds.class_names[y]
        n = seen[name] = seen.get(name, -1) + 1
        write_pnm(os.path.join(root, name, f"{n:05d}.ppm"), to_bytes(img))


def split_dataset(ds, ratios=(0.8, 0.1, 0.1), seed=0):
    """Stratified split: per class, floor test, floor train, remainder to val."""
    r_train, r_val, r_test = ratios
    if min(ratios) < 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DataError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_test = math.floor(r_test * n + _FLOOR_EPS)
        n_train = math.floor(r_train * n + _FLOOR_EPS)
        test.extend(idx[:n_test])
        train.extend(idx[n_test:n_test + n_train])
        val.extend(idx[n_test + n_train:])
    as_arr = lambda xs: np.sort(np.asarray(xs, dtype=np.int64))
    return Split(as_arr(train), as_arr(val), as_arr(test))


def kfold_split(ds, k=5, seed=0, indices=None):
    """Stratified k folds as a list of (train, val) index arrays."""
    if k < 2:
        raise DataError("k-fold needs k >= 2")
    pool = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    labels = ds.labels[pool]
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in range(ds.num_classes):
        members = pool[labels == c]
        if 0 < len(members) < k:
            raise DataError(f"class {ds.class_names[c]!r} has {len(members)} samples, fewer than k={k}")
        members = members[rng.permutation(len(members))]
        for j, i in enumerate(members):
            folds[(j + offset) % k].append(i)
        # rotate the starting fold so leftovers do not pile onto fold 0
        offset += len(members)
    out = []
    for f in range(k):
        val = np.sort(np.asarray(folds[f], dtype=np.int64))
        train = np.sort(np.concatenate([np.asarray(folds[g], dtype=np.int64) for g in range(k) if g != f]))
        out.append((train, val))
    return out


def balance_by_augmentation(ds, cfg, target=None):
    """Append augmented copies until every class reaches ``target`` (default: max count)."""
    counts = ds.counts
    target = int(counts.max()) if target is None else int(target)
    rng = aug.sample_rng(cfg.seed, "balance")
    images, labels, paths = list(ds.images), list(ds.labels), list(ds.paths)
    for c in range(ds.num_classes):
        members = ds.class_indices(c)
        if len(members) == 0:
            log.warning("class %s is empty and cannot be balanced", ds.class_names[c])
            continue
        for _ in range(target - len(members)):
            src = int(members[rng.integers(len(members))])
            images.append(aug.augment_sample(ds.images[src], cfg, rng))
            labels.append(c)
            paths.append(None)
    return Dataset(images, labels, list(ds.class_names), paths)


def batch_iter(indices, batch_size, seed=None, shuffle=True, drop_last=False):
    """Yield index batches; one call covers one epoch."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    idx = np.asarray(indices, dtype=np.int64)
    if shuffle:
        idx = idx[np.random.default_rng(seed).permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        batch = idx[start:start + batch_size]
        if drop_last and len(batch) < batch_size:
            return
        yield batch


def num_batches(n, batch_size, drop_last=False):
    return n // batch_size if drop_last else -(-n // batch_size)


def synth_dataset(num_classes=3, per_class=10, size=(32, 32), seed=0, channels=3):
    """Coloured-blob images: class k puts a blob of a class colour at a class position."""
    if num_classes < 2:
        raise DataError("synthetic datasets need at least two classes")
    h, w = size
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    radius = 0.28 * min(h, w)
    sigma = 0.12 * min(h, w)
    images, labels = [], []
    for k in range(num_classes):
        angle = 2 * math.pi * k / num_classes
        cy = (h - 1) / 2 + radius * math.sin(angle)
        cx = (w - 1) / 2 + radius * math.cos(angle)
        color = np.array(colorsys.hsv_to_rgb(k / num_classes, 0.8, 0.95))[:channels]
        for _ in range(per_class):
            jy, jx = rng.uniform(-1.0, 1.0, 2)
            blob = np.exp(-((yy - cy - jy) ** 2 + (xx - cx - jx) ** 2) / (2 * sigma ** 2))
            img = 0.1 + blob[None] * (color[:, None, None] - 0.1)
            img = img + rng.normal(0.0, 0.03, (channels, h, w))
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(k)
    names = [f"class_{k:02d}" for k in range(num_classes)]
    return Dataset(images, labels, names)
