"""Confusion-matrix metrics: weighted accuracy (mean recall), accuracy, mean OvR AUC."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _io
from .errors import DegenerateClass, EmptyClass, EmptyMatrix, LabelOutOfRange, LengthMismatch

REPORT_HEADER = ("metric", "value")


def confusion_matrix(truth, predicted, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    truth = np.asarray(truth, dtype=np.int64).ravel()
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    if truth.shape != predicted.shape:
        raise LengthMismatch(f"{truth.size} truth labels vs {predicted.size} predictions")
    for name, arr in (("truth", truth), ("predicted", predicted)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"{name} label outside [0, {n_classes})")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (truth, predicted), 1)
    return m


def per_class_recall(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    support = m.sum(axis=1)
    if np.any(support == 0):
        empty = np.flatnonzero(support == 0).tolist()
        raise EmptyClass(f"class(es) {empty} have no true samples")
    return np.diag(m) / support


def wacc(m: np.ndarray) -> float:
    """Mean per-class recall.

    The recalls are summed left to right in class order; the compiled subset
    search uses the same order so the two agree bit for bit.
    """
    recalls = per_class_recall(m)
    total = 0.0
    for r in recalls.tolist():
        total += r
    return total / len(recalls)


def accuracy(m: np.ndarray) -> float:
    m = np.asarray(m)
    n = int(m.sum())
    if n == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return int(np.trace(m)) / n


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    # boundaries of runs of tied values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    avg = (starts + ends + 1) / 2.0  # 1-based mean rank of each run
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def binary_auc(positive: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass("one-vs-rest problem has no positives or no negatives")
    ranks = _average_ranks(scores)
    return (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def per_class_auc(truth, scores) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64).ravel()
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != truth.size:
        raise LengthMismatch(f"scores shape {scores.shape} does not match {truth.size} labels")
    out = np.empty(scores.shape[1])
    for c in range(scores.shape[1]):
        try:
            out[c] = binary_auc(truth == c, scores[:, c])
        except DegenerateClass:
            raise DegenerateClass(f"class {c} is all-present or all-absent") from None
    return out


def mean_auc_ovr(truth, scores) -> float:
    return float(per_class_auc(truth, scores).mean())


def report_rows(truth, scores, n_classes: int) -> list[tuple[str, float]]:
    """Rows of ``report.csv``: wacc, accuracy, mean_auc, then ``recall_i``."""
    scores = np.asarray(scores, dtype=np.float64)
    m = confusion_matrix(truth, scores.argmax(axis=1), n_classes)
    rows = [("wacc", wacc(m)), ("accuracy", accuracy(m)), ("mean_auc", mean_auc_ovr(truth, scores))]
    rows += [(f"recall_{i}", float(r)) for i, r in enumerate(per_class_recall(m))]
    return rows


def save_report(rows: Sequence[tuple[str, float]], path) -> None:
    _io.write_csv(path, REPORT_HEADER, [(k, _io.format_float(v)) for k, v in rows])
