"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The same lines are repeated in the terminal summary (see conftest.py) so
they stay visible when pytest captures output.
"""

import functools
import time
from pathlib import Path

import numpy as np

import gradsuite
from leafnet.augment import (
    AugmentConfig,
    augment_sample,
    horizontal_flip,
    reflect_index,
    rotate,
    sample_rng,
    shift,
    zoom,
)
from leafnet.checkpoint import load_checkpoint, save_checkpoint
from leafnet.data import Dataset, Split, batch_iter, kfold_split, num_batches, split_dataset, synth_dataset
from leafnet.gradcam import gradcam, gradcam_map
from leafnet.metrics import classification_report
from leafnet.models import ModelSpec, build_manifest, build_model
from leafnet.optim import VARIANTS, OptimizerState, Schedule, cosine_annealing_lr
from leafnet.report import RUN_ARTIFACTS
from leafnet.training import EarlyStopping, TrainConfig, evaluate, sweep, train

REPO = Path(__file__).resolve().parent.parent
RESULTS = {}
EMPTY = np.zeros(0, dtype=np.int64)


def criterion(number, title, budget):
    """Record PASS/FAIL plus runtime for one criterion; a blown budget fails it."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                assert elapsed <= budget, f"took {elapsed:.1f}s, budget {budget}s"
            except BaseException as exc:
                elapsed = time.perf_counter() - start
                RESULTS[number] = ("FAIL", title, f"{type(exc).__name__}: {exc}", elapsed)
                print(f"FAIL criterion {number} ({title}) after {elapsed:.2f}s: {exc}")
                raise
            RESULTS[number] = ("PASS", title, detail, elapsed)
            print(f"PASS criterion {number} ({title}) in {elapsed:.2f}s {detail}".rstrip())

        return run

    return wrap


@criterion(1, "gradient suite", 60)
def test_c01_gradient_suite():
    worst = gradsuite.worst_errors(gradsuite.INSTANCES, seed=2024)
    assert set(worst) == set(gradsuite.CHECKS) | {"graph"}
    bad = {k: v for k, v in worst.items() if not v <= gradsuite.TOL}
    assert not bad, f"relative error above {gradsuite.TOL}: {bad}"
    return f"worst={max(worst.values()):.1e} over {gradsuite.INSTANCES} instances/layer"


BEAN = ([[39, 4, 0], [2, 38, 3], [0, 0, 42]], {
    "precision": (0.9512, 0.9048, 0.9333), "recall": (0.9070, 0.8837, 1.0000),
    "f1": (0.9286, 0.8941, 0.9655), "accuracy": 0.9297,
    "macro": (0.9298, 0.9302, 0.9294), "weighted": (0.9297, 0.9297, 0.9291)})
AUGMENTED = ([[41, 2, 0], [4, 38, 1], [0, 0, 42]], {
    "precision": (0.9111, 0.9500, 0.9767), "recall": (0.9535, 0.8837, 1.0000),
    "f1": (0.9318, 0.9157, 0.9882), "accuracy": 0.9453,
    "macro": (0.9460, 0.9457, 0.9452), "weighted": (0.9457, 0.9453, 0.9449)})


@criterion(2, "metric oracle", 1)
def test_c02_metric_oracle():
    r4 = lambda vals: tuple(round(float(v), 4) for v in vals)
    for cm, want in (BEAN, AUGMENTED):
        r = classification_report(cm)
        got = {
            "precision": r4(r.precision), "recall": r4(r.recall), "f1": r4(r.f1),
            "accuracy": round(r.accuracy, 4),
            "macro": r4([r.macro[k] for k in ("precision", "recall", "f1-score")]),
            "weighted": r4([r.weighted[k] for k in ("precision", "recall", "f1-score")]),
        }
        assert got == want, f"{cm}: {got} != {want}"
        assert list(r.support) == [43, 43, 42]
    return "both matrices exact to 4 dp"


def _counted(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    return Dataset([None] * len(labels), labels, [f"c{i}" for i in range(len(counts))])


@criterion(3, "split oracle", 1)
def test_c03_split_oracle():
    ds = _counted([432, 436, 428])
    seeds = range(25)
    for seed in seeds:
        split = split_dataset(ds, (0.8, 0.1, 0.1), seed)
        assert split.sizes() == (1035, 133, 128), (seed, split.sizes())
        assert list(np.bincount(ds.labels[split.test], minlength=3)) == [43, 43, 42]
    return f"(1035, 133, 128) for seeds 0..{seeds[-1]}"


@criterion(4, "batching oracle", 1)
def test_c04_batching_oracle():
    batches = list(batch_iter(np.arange(1034), 32, seed=0))
    assert len(batches) == num_batches(1034, 32) == 33
    assert sorted(np.concatenate(batches)) == list(range(1034))
    return "33 batches"


def _fit_until(name, width, target, budget_epochs):
    ds = synth_dataset(3, 10, (32, 32), seed=0)
    everything = Split(np.arange(len(ds)), EMPTY, EMPTY)
    cfg = TrainConfig(ModelSpec(name, 3, [(32, 32)], width_multiplier=width, seed=0), "adam", 1e-3,
                      batch_size=8, epochs=budget_epochs, seed=0, early_stopping=False)
    seen = []

    def reached(epoch, record, graph):
        seen.append(evaluate(graph, ds).report.accuracy)
        return seen[-1] >= target

    start = time.perf_counter()
    result = train(cfg, ds, everything, callback=reached)
    return seen[-1], len(result.history), time.perf_counter() - start


@criterion(5, "training smoke", 7 * 60)
def test_c05_training_smoke():
    acc, epochs, secs = _fit_until("beannet", 0.5, 1.0, 300)
    assert acc == 1.0, f"beannet toy train accuracy {acc} after {epochs} epochs"
    assert secs <= 120, f"beannet toy took {secs:.1f}s"
    acc2, epochs2, secs2 = _fit_until("dmcnn", 0.125, 0.95, 300)
    assert acc2 >= 0.95, f"dmcnn toy train accuracy {acc2}"
    assert secs2 <= 300, f"dmcnn toy took {secs2:.1f}s"
    return f"beannet 100% at epoch {epochs} ({secs:.1f}s); dmcnn {acc2:.1%} at epoch {epochs2} ({secs2:.1f}s)"


@criterion(6, "architecture conformance", 30)
def test_c06_architecture():
    spec = ModelSpec("dmcnn", 10)
    m = build_manifest(build_model(spec, initialize=False), spec)
    assert sorted(m["inputs"].values()) == [[3, 128, 128], [3, 224, 224], [3, 256, 256]]
    kinds = [n["kind"] for n in m["nodes"]]
    assert kinds.count("softmax") == 1
    for i in range(3):
        trunk = [n for n in m["nodes"] if n["id"].startswith(f"s{i}_")]
        assert len([n for n in trunk if n["kind"] == "conv2d"]) == 4
        assert sum(n["kind"] == "global_avg_pool" for n in trunk) == 1
        assert sum(n["kind"] == "maxpool2d" and "_b" in n["id"] for n in trunk) == 3
        assert [n["hyper"]["out_features"] for n in trunk if n["kind"] == "dense" and "fc" in n["id"]] == [256, 128]
        assert [n["hyper"]["p"] for n in trunk if n["kind"] == "dropout" and "_b" not in n["id"]] == [0.5, 0.5]
    bspec = ModelSpec("brassicanet", 10)
    bm = build_manifest(build_model(bspec, initialize=False), bspec)
    assert bm["layer_count"] in (23, 24)
    assert [c["filters"] for c in bm["conv_layers"]] == [64, 256, 256, 256, 128]
    assert [c["kernel"] for c in bm["conv_layers"]] == [5, 3, 3, 3, 3]
    return f"dmcnn 3 trunks; brassicanet {bm['layer_count']} layers"


def _quadratic(p):
    a = np.array([1.0, 3.0, 0.5, 2.0])
    return 0.5 * float(np.sum(a * p * p)), a * p


@criterion(7, "schedule and optimizer properties", 60)
def test_c07_schedule_optimizer():
    s = Schedule("cosine_annealing", lr_max=0.1, lr_min=0.001, T=50)
    assert abs(cosine_annealing_lr(s, 0) - 0.1) <= 1e-12
    assert abs(cosine_annealing_lr(s, 50) - 0.001) <= 1e-12
    assert abs(cosine_annealing_lr(s, 25) - 0.0505) <= 1e-12
    lr = 0.01
    for g in (1e-3, 0.5, -7.0, 1e4):
        params = {"w": np.zeros(4)}
        OptimizerState("adam", lr=lr, eps=1e-12).step(params, {"w": np.full(4, g)})
        assert np.max(np.abs(np.abs(params["w"]) - lr)) <= 1e-6 * lr
    for variant in VARIANTS:
        p0 = np.array([1.0, -2.0, 0.5, 3.0])
        before, grad = _quadratic(p0)
        params = {"w": p0.copy()}
        OptimizerState(variant, lr=0.01).step(params, {"w": grad})
        assert _quadratic(params["w"])[0] < before, variant
    ds = synth_dataset(3, 4, (32, 32), seed=4)
    base = TrainConfig(ModelSpec("beannet", 3, [(32, 32)], width_multiplier=0.25, seed=0), "adam", 1e-3,
                       batch_size=4, epochs=1, seed=0)
    rows, _ = sweep(base, {"optimizer": list(VARIANTS)}, ds)
    assert [r.optimizer for r in rows] == list(VARIANTS) and all(r.status == "ok" for r in rows)
    return f"{len(VARIANTS)} optimizers swept"


@criterion(8, "augmentation properties", 30)
def test_c08_augmentation():
    rng = np.random.default_rng(8)
    x = rng.random((3, 9, 11))
    assert np.array_equal(horizontal_flip(horizontal_flip(x)), x)
    assert np.array_equal(rotate(x, 0), x) and np.array_equal(zoom(x, 1), x) and np.array_equal(shift(x, 0, 0), x)
    for n in (1, 2, 5, 8):
        sq = rng.random((2, n, n))
        out = rotate(sq, 90)
        for i in range(n):
            for j in range(n):
                assert np.array_equal(out[:, j, n - 1 - i], sq[:, i, j])
    for n in range(1, 40):
        idx = reflect_index(np.arange(-5 * n - 7, 5 * n + 7), n)
        assert idx.min() >= 0 and idx.max() < n
    cfg = AugmentConfig(rotation_range=30, zoom_range=0.2, shift_range=0.2)
    a = augment_sample(x, cfg, sample_rng(11, "acc"))
    b = augment_sample(x, cfg, sample_rng(11, "acc"))
    assert a.tobytes() == b.tobytes()


@criterion(9, "protocol properties", 60)
def test_c09_protocol(tmp_path):
    ds = _counted([23, 17, 30])
    folds = kfold_split(ds, 5, seed=9)
    assert sorted(np.concatenate([v for _, v in folds])) == list(range(len(ds)))
    for c in range(3):
        per_fold = [int(np.sum(ds.labels[v] == c)) for _, v in folds]
        assert max(per_fold) - min(per_fold) <= 1
    for trace, expected in (([1.0, 0.9, 0.95, 0.96, 0.97, 0.5], 5), ([1.0, 0.9, 0.8, 0.7], None)):
        stopper, stopped = EarlyStopping("val_loss", patience=3), None
        for epoch, value in enumerate(trace, start=1):
            if stopper.update(epoch, value)[1]:
                stopped = epoch
                break
        assert stopped == expected
    data = synth_dataset(3, 6, (32, 32), seed=1)
    spec = ModelSpec("dmcnn", 3, [(32, 32)], width_multiplier=0.125, seed=0)
    result = train(TrainConfig(spec, "adam", 1e-3, batch_size=6, epochs=2, seed=0), data)
    path = tmp_path / "m.ckpt"
    save_checkpoint(result.final, path)
    x = np.stack(data.images[:6])
    before = result.final.graph().forward(x, "infer")
    after = load_checkpoint(path).graph().forward(x, "infer")
    drift = np.max(np.abs(after - before)) / np.max(np.abs(before))
    assert drift <= 1e-6
    return f"checkpoint drift {drift:.1e}"


@criterion(10, "grad-cam properties", 30)
def test_c10_gradcam():
    maps = np.array([[[1.0, 2.0], [0.0, 4.0]], [[3.0, 0.0], [1.0, 1.0]]])
    grads = np.array([[[0.5, 0.5], [0.5, 0.5]], [[-1.0, 0.0], [1.0, -2.0]]])
    assert np.max(np.abs(gradcam_map(maps, grads) - [[0.0, 1 / 1.5], [0.0, 1.0]])) <= 1e-9
    rng = np.random.default_rng(10)
    fmap = rng.normal(size=(2, 6, 6))
    relu = np.maximum(fmap.sum(axis=0), 0)
    assert np.allclose(gradcam_map(fmap, np.full_like(fmap, 0.4)), relu / relu.max(), atol=1e-12)
    for _ in range(50):
        h = gradcam_map(rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 5, 5)))
        assert h.min() >= 0 and h.max() <= 1
    g = build_model(ModelSpec("dmcnn", 3, [(32, 32)], width_multiplier=0.125, seed=3))
    imgs = synth_dataset(3, 2, (32, 32), seed=3).images
    g.forward(np.stack(imgs), "train")  # records batch-norm statistics
    img = imgs[0]
    base = gradcam(g, img, target_class=2)
    g.node("classifier").params["b"] += 5.0
    shifted = gradcam(g, img, target_class=2)
    assert np.max(np.abs(shifted.values - base.values)) <= 1e-12


@criterion(11, "end-to-end cli", 120)
def test_c11_cli_chain(tmp_path):
    from leafnet.cli import main

    fixture = REPO / "fixtures" / "synth3"
    run = tmp_path / "run"
    assert main(["train", "--config", str(REPO / "configs" / "toy.yaml"), "--out", str(run)]) == 0
    missing = [a for a in RUN_ARTIFACTS if not (run / a).is_file()]
    assert not missing, f"missing run artifacts {missing}"
    assert main(["eval", "--checkpoint", str(run / "best.ckpt"), "--data", str(fixture),
                 "--format", "json", "--out", str(tmp_path / "eval.json")]) == 0
    assert (tmp_path / "eval.json").is_file()
    cam = tmp_path / "cam"
    assert main(["gradcam", "--checkpoint", str(run / "best.ckpt"),
                 "--image", str(fixture / "class_02" / "00004.ppm"), "--out", str(cam)]) == 0
    assert all((cam / f).is_file() for f in ("heatmap.pgm", "overlay.png", "gradcam.json"))
    sw = tmp_path / "sweep"
    assert main(["sweep", "--config", str(REPO / "configs" / "toy.yaml"),
                 "--grid", str(REPO / "configs" / "grid.yaml"), "--out", str(sw)]) == 0
    assert (sw / "sweep.csv").is_file() and (sw / "sweep.svg").is_file()
    return "train, eval, gradcam, sweep exit 0"
