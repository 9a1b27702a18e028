"""Per-appliance ON/OFF classification scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

METRICS = ("accuracy", "f1", "precision", "recall")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(getattr(pred, "values", pred)).ravel()
    truth = np.asarray(getattr(truth, "values", truth)).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction length {pred.size} != truth length {truth.size}")
    p = pred.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num, den):
    return num / den if den else 0.0


def scores(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall and F1; a zero denominator yields 0."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    accuracy = _ratio(c.tp + c.tn, c.total)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return {"accuracy": accuracy, "f1": f1, "precision": precision, "recall": recall}


def average_scores(per_client: list[dict[str, dict[str, float]]]) -> dict[str, dict[str, float]]:
    """Unweighted mean over clients of ``{appliance: {metric: value}}`` tables."""
    if not per_client:
        raise ValueError("need at least one client table")
    out = {}
    for appliance in per_client[0]:
        out[appliance] = {
            m: float(np.mean([table[appliance][m] for table in per_client])) for m in METRICS
        }
    return out


def appliance_confusions(pred: np.ndarray, truth: np.ndarray, names) -> dict[str, ConfusionCounts]:
    """Split ``(K, I, T)`` prediction/truth arrays into one confusion per appliance."""
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return {name: confusion(pred[:, i, :], truth[:, i, :]) for i, name in enumerate(names)}


def evaluate(params, spec, dataset, part="test", batch_size=256) -> dict[str, dict[str, float]]:
    from .nn import predict_states

    X, Y = dataset.part(part)
    if X.shape[0] == 0:
        raise ValueError(f"client {dataset.client_id} has an empty {part} split")
    pred = np.concatenate([predict_states(params, spec, X[i:i + batch_size])
                           for i in range(0, X.shape[0], batch_size)])
    counts = appliance_confusions(pred, Y, dataset.appliance_names)
    return {name: scores(c) for name, c in counts.items()}
