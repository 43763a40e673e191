import math
from dataclasses import replace

import numpy as np
import pytest

from leafnet.data import Dataset, Split, synth_dataset
from leafnet.errors import LeafnetError, TrainingDivergedError
from leafnet.layers import GraphBuilder
from leafnet.models import ModelSpec, build_model
from leafnet.training import (
    EarlyStopping,
    History,
    TrainConfig,
    aggregate_reports,
    best_setting,
    derive_seed,
    evaluate,
    expand_grid,
    run_kfold,
    sweep,
    sweep_csv,
    train,
)

EMPTY = np.zeros(0, dtype=np.int64)


@pytest.fixture(scope="module")
def ds():
    return synth_dataset(3, 10, (32, 32), seed=0)


def bean_cfg(**kw):
    base = dict(model=ModelSpec("beannet", 3, [(32, 32)], width_multiplier=0.5, seed=0),
                optimizer="adam", lr=1e-3, batch_size=8, epochs=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_one_epoch_history_and_checkpoints(ds):
    result = train(bean_cfg(epochs=1), ds)
    assert len(result.history) == 1
    assert result.best is not None and result.final.epoch == 1
    best, history = result
    assert history is result.history and best is result.best


def test_optimizer_steps_per_epoch(ds):
    cfg = bean_cfg(epochs=3, batch_size=7, early_stopping=False)
    result = train(cfg, ds)
    n = len(result.split.train)
    assert result.optimizer_steps == 3 * math.ceil(n / 7)


def test_diverging_lr_stops_early(ds):
    cfg = bean_cfg(lr=10.0, epochs=30, patience=3, split=(0.6, 0.2, 0.2))
    result = train(cfg, ds)
    assert result.stopped_epoch is not None and result.stopped_epoch < 30
    assert len(result.history) == result.stopped_epoch
    # three non-improving epochs after the best one
    assert result.stopped_epoch - result.best.epoch == 3


def test_nonfinite_loss_names_epoch_and_batch(ds):
    cfg = bean_cfg(epochs=1)
    bad = Dataset([np.full((3, 32, 32), 1e300)] * 6, [0, 1, 2, 0, 1, 2], ds.class_names)
    with pytest.raises(TrainingDivergedError) as err:
        train(cfg, bad, Split(np.arange(6), EMPTY, EMPTY))
    assert err.value.epoch == 1 and err.value.batch == 1
    assert "epoch 1" in str(err.value)


def test_beannet_toy_overfits(ds):
    everything = Split(np.arange(len(ds)), EMPTY, EMPTY)
    cfg = bean_cfg(epochs=200, early_stopping=False)

    def done(epoch, record, graph):
        return evaluate(graph, ds).report.accuracy == 1.0

    result = train(cfg, ds, everything, callback=done)
    assert result.stopped_epoch is not None
    ev = evaluate(result.final, ds)
    assert ev.report.accuracy == 1.0
    assert np.count_nonzero(ev.confusion - np.diag(np.diag(ev.confusion))) == 0


def test_training_is_deterministic(ds):
    a = train(bean_cfg(epochs=2), ds)
    b = train(bean_cfg(epochs=2), ds)
    for ra, rb in zip(a.history, b.history):
        assert (ra.train_loss, ra.train_acc, ra.val_loss) == (rb.train_loss, rb.train_acc, rb.val_loss)
    for k, v in a.final.tensors.items():
        np.testing.assert_array_equal(v, b.final.tensors[k])


def test_augmented_training_runs(ds):
    from leafnet.augment import AugmentConfig

    result = train(bean_cfg(epochs=1, augment=AugmentConfig(seed=3)), ds)
    assert math.isfinite(result.history[0].train_loss)


@pytest.mark.parametrize("trace,monitor,expected", [
    ([1.0, 0.9, 0.95, 0.96, 0.97, 0.5], "val_loss", 5),
    ([1.0, 0.9, 0.8, 0.7, 0.6, 0.5], "val_loss", None),
    ([0.5, 0.6, 0.6, 0.55, 0.6, 0.9], "val_accuracy", 5),
    ([1.0, 1.0, 1.0, 1.0], "val_loss", 4),
    ([float("nan"), 1.0, 1.1, 1.2, 1.3], "val_loss", 5),
])
def test_early_stopping_scripted_traces(trace, monitor, expected):
    stopper = EarlyStopping(monitor, patience=3)
    stopped = None
    for epoch, value in enumerate(trace, start=1):
        _, stop = stopper.update(epoch, value)
        if stop:
            stopped = epoch
            break
    assert stopped == expected


def test_history_csv_round_trip(ds):
    result = train(bean_cfg(epochs=2), ds)
    text = result.history.to_csv()
    assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds"
    back = History.from_csv(text)
    assert back.column("train_loss") == result.history.column("train_loss")


def _constant_model(k, favourite):
    b = GraphBuilder("stub")
    x = b.input((1, 2, 2))
    h = b.dense(b.flatten(x), k)
    g = b.build(b.softmax(h))
    g.node(h).params["W"][...] = 0.0
    g.node(h).params["b"][...] = np.eye(k)[favourite] * 5
    return g


def test_evaluate_hand_count():
    labels = [0, 1, 1, 2, 1]
    five = Dataset([np.zeros((1, 2, 2))] * 5, labels, ["a", "b", "c"])
    ev = evaluate(_constant_model(3, 1), five)
    np.testing.assert_array_equal(ev.confusion, [[0, 1, 0], [0, 3, 0], [0, 1, 0]])
    assert ev.report.accuracy == 0.6
    again = evaluate(_constant_model(3, 1), five)
    np.testing.assert_array_equal(ev.probs, again.probs)


def test_evaluate_class_count_mismatch():
    two = Dataset([np.zeros((1, 2, 2))] * 2, [0, 1], ["a", "b"])
    with pytest.raises(LeafnetError, match="3 classes"):
        evaluate(_constant_model(3, 0), two)


def test_evaluate_is_pure(ds):
    result = train(bean_cfg(epochs=1), ds)
    g = result.final.graph()
    a, b = evaluate(g, ds), evaluate(g, ds)
    np.testing.assert_array_equal(a.probs, b.probs)
    assert a.loss == b.loss


def test_kfold_two_folds(ds):
    result = run_kfold(bean_cfg(epochs=1), ds, k=2)
    assert len(result.folds) == 2
    accs = [r.accuracy for _, r in result.folds]
    mean = result.aggregate["accuracy"]["mean"]
    assert min(accs) <= mean <= max(accs)
    assert abs(result.aggregate["accuracy"]["std"] - np.std(accs)) < 1e-15


def test_fold_seeds_differ():
    s0, s1 = derive_seed(0, "fold", 0), derive_seed(0, "fold", 1)
    assert s0 != s1
    spec = ModelSpec("beannet", 3, [(32, 32)], 0.5)
    w0 = build_model(replace(spec, seed=s0)).parameters()["conv1.W"]
    w1 = build_model(replace(spec, seed=s1)).parameters()["conv1.W"]
    assert not np.array_equal(w0, w1)


def test_aggregate_reports_population_std():
    class R:
        def __init__(self, a):
            self.accuracy = a
            self.macro = {"precision": a, "recall": a, "f1-score": a}
            self.weighted = {"f1-score": a}

    agg = aggregate_reports([R(0.5), R(1.0)])
    assert agg["accuracy"] == {"mean": 0.75, "std": 0.25}


def test_sweep_optimizer_roster(ds):
    rows, results = sweep(bean_cfg(epochs=1), {"optimizer": ["adam", "sgd", "nadam", "rmsprop", "adagrad"]}, ds)
    assert [r.optimizer for r in rows] == ["adam", "sgd", "nadam", "rmsprop", "adagrad"]
    assert all(r.status == "ok" for r in rows)
    assert len(sweep_csv(rows).splitlines()) == 6
    assert best_setting(rows) in rows


def test_sweep_batch_sizes(ds):
    rows, _ = sweep(bean_cfg(epochs=1), {"batch_size": [32, 64, 128]}, ds)
    assert [r.batch_size for r in rows] == [32, 64, 128]


def test_single_cell_sweep_matches_train(ds):
    cfg = bean_cfg(epochs=2)
    rows, results = sweep(cfg, {"lr": [cfg.lr]}, ds)
    direct = train(cfg, ds)
    assert results[0].history.column("train_loss") == direct.history.column("train_loss")
    assert rows[0].train_acc == direct.history[-1].train_acc


def test_sweep_failed_cell_marked(ds):
    rows, _ = sweep(bean_cfg(epochs=1), {"optimizer": ["adam"], "batch_size": [8], "lr": [1e-3, -1.0]}, ds)
    assert [r.status for r in rows] == ["ok", "FAILED"]
    assert rows[1].error


def test_expand_grid_errors():
    with pytest.raises(LeafnetError):
        expand_grid({})
    with pytest.raises(LeafnetError):
        expand_grid({"optimizer": []})
    with pytest.raises(LeafnetError):
        expand_grid({"momentum": [0.9]})
    assert len(expand_grid({"optimizer": ["adam", "sgd"], "lr": [0.1, 0.01, 0.001]})) == 6
