"""Classification metrics: accuracy, confusion counts, one-vs-rest ROC and AUC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError


def accuracy(predictions, truth) -> float:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise InputError(f"prediction/truth length mismatch: {predictions.shape} vs {truth.shape}")
    if truth.size == 0:
        raise InputError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(predictions == truth) / truth.size)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion(predictions, truth, classes: int) -> tuple[np.ndarray, list[ConfusionCounts]]:
    """Matrix indexed [true][predicted] plus per-class one-vs-rest counts."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise InputError(f"prediction/truth length mismatch: {predictions.shape} vs {truth.shape}")
    for name, arr in (("prediction", predictions), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise InputError(f"{name} label outside [0, {classes})")
    matrix = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(matrix, (truth, predictions), 1)
    total = int(truth.size)
    diag = np.diag(matrix)
    rows, cols = matrix.sum(axis=1), matrix.sum(axis=0)
    counts = [
        ConfusionCounts(
            tp=int(diag[c]),
            fp=int(cols[c] - diag[c]),
            fn=int(rows[c] - diag[c]),
            tn=int(total - rows[c] - cols[c] + diag[c]),
        )
        for c in range(classes)
    ]
    return matrix, counts


def precision_recall(counts: ConfusionCounts) -> tuple[float | None, float | None]:
    """(precision, recall); ``None`` where the denominator is zero."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else None
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    return precision, recall


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def roc_curve(scores, is_positive) -> list[RocPoint]:
    """ROC points for thresholds at every distinct score, descending.

    A sample counts as predicted positive when ``score >= threshold``. The
    first point uses a sentinel threshold of +inf and sits at (0, 0).
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    if scores.shape != pos.shape or scores.ndim != 1:
        raise InputError(f"scores/truth shape mismatch: {scores.shape} vs {pos.shape}")
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC curve undefined: truth needs both positive and negative samples")

    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    # last index of each run of tied scores
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    points = [RocPoint(math.inf, 0.0, 0.0)]
    points += [RocPoint(float(s[i]), tp[i] / n_pos, fp[i] / n_neg) for i in ends]
    return points


def auc(points: list[RocPoint]) -> float:
    """Trapezoidal area under (fpr, tpr)."""
    if len(points) < 2:
        raise InputError("AUC needs at least two ROC points")
    fpr = np.array([p.fpr for p in points])
    tpr = np.array([p.tpr for p in points])
    if np.any(np.diff(fpr) < 0):
        raise InputError("ROC points must be sorted by fpr")
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


@dataclass
class EvalReport:
    accuracy: float
    matrix: np.ndarray
    counts: list[ConfusionCounts]
    precision: list[float | None]
    recall: list[float | None]
    roc: dict[int, list[RocPoint]]
    auc: dict[int, float]


def evaluate_predictions(probs: np.ndarray, truth: np.ndarray) -> EvalReport:
    """Full report from (N, classes) probabilities and integer truth labels.

    Classes without both positive and negative samples get no ROC/AUC entry.
    """
    probs = np.asarray(probs)
    truth = np.asarray(truth, dtype=np.int64)
    classes = probs.shape[1]
    preds = np.argmax(probs, axis=1)
    matrix, counts = confusion(preds, truth, classes)
    pr = [precision_recall(c) for c in counts]
    roc, areas = {}, {}
    for c in range(classes):
        positive = truth == c
        if positive.any() and not positive.all():
            roc[c] = roc_curve(probs[:, c], positive)
            areas[c] = auc(roc[c])
    return EvalReport(
        accuracy=accuracy(preds, truth),
        matrix=matrix,
        counts=counts,
        precision=[p for p, _ in pr],
        recall=[r for _, r in pr],
        roc=roc,
        auc=areas,
    )


# ---------------------------------------------------------------------- CSVs


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _writer(path):
    f = open(path, "w", encoding="utf-8", newline="")
    return f, csv.writer(f, lineterminator="\n")


def write_predictions(path, probs: np.ndarray, truth: np.ndarray) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(["sample_index", "true_class", "pred_class"] + [f"score_{c}" for c in range(probs.shape[1])])
        for i, (row, t) in enumerate(zip(probs, truth)):
            w.writerow([i, int(t), int(np.argmax(row))] + [repr(float(v)) for v in row])


def write_confusion(path, matrix: np.ndarray, label_map: list[str]) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(["true\\pred"] + label_map)
        for ch, row in zip(label_map, matrix):
            w.writerow([ch] + [int(v) for v in row])


def write_roc(directory, report: EvalReport) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, points in report.roc.items():
        path = directory / f"roc_class_{c:02d}.csv"
        f, w = _writer(path)
        with f:
            w.writerow(["class", "threshold", "fpr", "tpr"])
            for p in points:
                w.writerow([c, repr(p.threshold), repr(p.fpr), repr(p.tpr)])
        paths.append(path)
    return paths


def write_auc_summary(path, report: EvalReport, label_map: list[str]) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(["class", "char", "auc"])
        for c, ch in enumerate(label_map):
            w.writerow([c, ch, _fmt(report.auc.get(c))])


def write_class_metrics(path, report: EvalReport, label_map: list[str]) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(["class", "char", "tp", "fp", "fn", "tn", "precision", "recall"])
        for c, ch in enumerate(label_map):
            k = report.counts[c]
            w.writerow([c, ch, k.tp, k.fp, k.fn, k.tn, _fmt(report.precision[c]), _fmt(report.recall[c])])
