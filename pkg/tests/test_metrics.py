import numpy as np
import pytest

from fednilm import metrics
from fednilm.errors import ShapeError
from fednilm.metrics import ConfusionCounts
from fednilm.nn import build_network

from conftest import SMALL_SPEC, random_dataset


def tally(pred, truth):
    tp = fp = fn = tn = 0
    for p, t in zip(pred.tolist(), truth.tolist()):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    acc = (tp + tn) / (tp + fp + fn + tn)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return (tp, fp, fn, tn), (acc, prec, rec, f1)


def test_hand_example():
    s = metrics.scores(ConfusionCounts(tp=8, fp=2, fn=2, tn=88))
    assert (s["accuracy"], s["precision"], s["recall"], s["f1"]) == pytest.approx((0.96, 0.8, 0.8, 0.8))


def test_against_independent_tally():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        rate = rng.uniform(0, 1)
        pred = (rng.random(n) < rate).astype(np.int8)
        truth = (rng.random(n) < rate).astype(np.int8)
        counts, expected = tally(pred, truth)
        c = metrics.confusion(pred, truth)
        assert (c.tp, c.fp, c.fn, c.tn) == counts
        s = metrics.scores(c)
        assert (s["accuracy"], s["precision"], s["recall"], s["f1"]) == pytest.approx(expected, abs=1e-15)


def test_zero_denominators_give_zero():
    s = metrics.scores(ConfusionCounts(tn=10))
    assert s == {"accuracy": 1.0, "f1": 0.0, "precision": 0.0, "recall": 0.0}
    assert metrics.scores(ConfusionCounts())["accuracy"] == 0.0


def test_confusion_additivity_and_shapes():
    a = ConfusionCounts(1, 2, 3, 4)
    assert a + a == ConfusionCounts(2, 4, 6, 8)
    with pytest.raises(ShapeError):
        metrics.confusion(np.zeros(3), np.zeros(4))


def test_average_scores_is_unweighted_mean():
    t1 = {"x": {"accuracy": 1.0, "f1": 0.5, "precision": 0.2, "recall": 0.0}}
    t2 = {"x": {"accuracy": 0.0, "f1": 0.5, "precision": 0.4, "recall": 1.0}}
    avg = metrics.average_scores([t1, t2])
    assert avg["x"] == pytest.approx({"accuracy": 0.5, "f1": 0.5, "precision": 0.3, "recall": 0.5})
    with pytest.raises(ValueError):
        metrics.average_scores([])


def test_evaluate_reports_every_appliance():
    ds = random_dataset(0)
    table = metrics.evaluate(build_network(SMALL_SPEC, 0), SMALL_SPEC, ds)
    assert set(table) == {"app0", "app1"}
    for s in table.values():
        assert set(s) == set(metrics.METRICS)
        assert all(0.0 <= v <= 1.0 for v in s.values())
