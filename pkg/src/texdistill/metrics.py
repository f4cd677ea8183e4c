"""Classification metrics, confusion matrices and multi-run aggregation."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .containers import save_pgm
from .core import Tensor, no_grad

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: list[int]

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray              # (C, C), rows true, cols predicted
    std: np.ndarray | None = None   # set on aggregated matrices

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def confusion_matrix(y_true, y_pred, n_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label/prediction length mismatch: {y_true.shape} vs {y_pred.shape}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    """Macro averages; a class never predicted has precision 0, as does F1 when P + R == 0."""
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValueError("cannot score an empty split")
    tp = np.diag(c)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return Metrics(accuracy=float(tp.sum() / total), precision=float(precision.mean()),
                   recall=float(recall.mean()), f1=float(f1.mean()),
                   support=[int(s) for s in support])


def score(y_true, y_pred, n_classes: int) -> tuple[Metrics, ConfusionMatrix]:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    return metrics_from_confusion(cm), cm


def predict_logits(model, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Forward ``x`` (n, 1, mels, frames) in chunks without recording a graph."""
    out = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            logits, _ = model(Tensor(x[i:i + batch_size]))
            out.append(logits.data)
    return np.concatenate(out, axis=0)


def evaluate(model, data, split: str = "test", batch_size: int = 32) -> tuple[Metrics, ConfusionMatrix]:
    ds = data.split(split)
    if len(ds) == 0:
        raise ValueError(f"cannot evaluate on an empty {split} split")
    pred = np.argmax(predict_logits(model, data.standardize(ds.x), batch_size), axis=1)
    return score(ds.y, pred, data.n_classes)


def aggregate_runs(runs) -> dict:
    """Mean and sample std per metric (and per confusion cell) over at least two runs.

    ``runs`` holds Metrics, ConfusionMatrix, or (Metrics, ConfusionMatrix) pairs.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError(f"aggregation needs at least 2 runs, got {len(runs)}")
    metrics = [r[0] if isinstance(r, tuple) else r for r in runs if isinstance(r, (tuple, Metrics))]
    cms = [r[1] if isinstance(r, tuple) else r for r in runs if isinstance(r, (tuple, ConfusionMatrix))]
    report = {}
    if metrics:
        if len({len(m.support) for m in metrics}) != 1:
            raise ValueError("runs disagree on the number of classes")
        for name in METRIC_NAMES:
            vals = np.array([getattr(m, name) for m in metrics])
            report[name] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1))}
    if cms:
        if len({cm.counts.shape for cm in cms}) != 1:
            raise ValueError("confusion matrices disagree on the number of classes")
        stack = np.stack([cm.counts.astype(np.float64) for cm in cms])
        report["confusion"] = ConfusionMatrix(stack.mean(axis=0), stack.std(axis=0, ddof=1))
    return report


def write_metrics_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def save_confusion_pgm(path, cm: ConfusionMatrix, cell: int = 32) -> None:
    """Row-normalised confusion matrix rendered as a grey image, one block per cell."""
    c = np.asarray(cm.counts, dtype=np.float64)
    rows = c.sum(axis=1, keepdims=True)
    norm = np.divide(c, rows, out=np.zeros_like(c), where=rows > 0)
    save_pgm(path, norm, scale=cell, vmin=0.0, vmax=1.0)
