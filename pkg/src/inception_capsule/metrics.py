"""Confusion counts, one-vs-rest classification metrics and ROC/AUC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class ConfusionCounts:
    matrix: np.ndarray  # rows: true class, columns: predicted class
    tp: np.ndarray
    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def from_matrix(cls, matrix) -> ConfusionCounts:
        m = np.asarray(matrix, dtype=np.int64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or np.any(m < 0):
            raise ContractError(f"confusion matrix must be square and nonnegative, got shape {m.shape}")
        tp = np.diag(m).copy()
        fp = m.sum(axis=0) - tp
        fn = m.sum(axis=1) - tp
        tn = m.sum() - tp - fp - fn
        return cls(m, tp, tn, fp, fn)

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


def confusion_counts(pred_labels: Sequence[int], true_labels: Sequence[int], n: int) -> ConfusionCounts:
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if pred.shape != true.shape:
        raise DimensionError(f"confusion_counts: {pred.size} predictions vs {true.size} labels")
    for name, arr in (("prediction", pred), ("label", true)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ContractError(f"confusion_counts: {name} outside [0, {n})")
    matrix = np.bincount(true * n + pred, minlength=n * n).reshape(n, n)
    return ConfusionCounts.from_matrix(matrix)


def _ratio(num, den, what: str, flags: list[str]) -> list[float]:
    out = []
    for k, (a, b) in enumerate(zip(num, den)):
        if b == 0:
            flags.append(f"{what}[{k}]: zero denominator")
            out.append(0.0)
        else:
            out.append(float(a) / float(b))
    return out


@dataclass
class MetricsReport:
    n_classes: int
    total: int
    accuracy: float
    precision: float
    recall: float
    sensitivity: float
    specificity: float
    f1: float
    per_class: dict[str, list[float]]
    matrix: list[list[int]]
    flags: list[str] = field(default_factory=list)
    # one ROC curve per class (one-vs-rest); None when the class is undefined
    roc: list[Optional[list[tuple[float, float]]]] = field(default_factory=list)
    auc_per_class: list[Optional[float]] = field(default_factory=list)
    auc: Optional[float] = None

    @property
    def roc_points(self) -> list[tuple[float, float]]:
        """The positive-class curve for binary problems, otherwise the first defined curve."""
        curves = self.roc[1:2] if self.n_classes == 2 else self.roc
        for c in curves:
            if c is not None:
                return c
        return []

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roc"] = [None if c is None else [list(p) for p in c] for c in self.roc]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        d = dict(d)
        d["roc"] = [None if c is None else [tuple(p) for p in c] for c in d.get("roc", [])]
        return cls(**d)


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    """Per-class one-vs-rest metrics with macro averages.

    ``accuracy`` is the overall diagonal fraction; the one-vs-rest accuracies
    are kept in ``per_class["accuracy"]``.
    """
    total = counts.total
    if total == 0:
        raise ContractError("compute_metrics: no samples counted")
    flags: list[str] = []
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    precision = _ratio(tp, tp + fp, "precision", flags)
    recall = _ratio(tp, tp + fn, "recall", flags)
    specificity = _ratio(tn, tn + fp, "specificity", flags)
    acc_ovr = [float(a + b) / total for a, b in zip(tp, tn)]
    f1 = []
    for k, (p, r) in enumerate(zip(precision, recall)):
        if p + r == 0:
            flags.append(f"f1[{k}]: zero denominator")
            f1.append(0.0)
        else:
            f1.append(2 * p * r / (p + r))
    per_class = {
        "accuracy": acc_ovr,
        "precision": precision,
        "recall": recall,
        "sensitivity": list(recall),
        "specificity": specificity,
        "f1": f1,
    }
    # correctly rounded sums keep the averages independent of class order
    macro = {k: math.fsum(v) / len(v) for k, v in per_class.items()}
    return MetricsReport(
        n_classes=counts.n_classes,
        total=total,
        accuracy=float(np.trace(counts.matrix)) / total,
        precision=macro["precision"],
        recall=macro["recall"],
        sensitivity=macro["recall"],
        specificity=macro["specificity"],
        f1=macro["f1"],
        per_class=per_class,
        matrix=counts.matrix.tolist(),
        flags=flags,
    )


def roc_auc(scores: Sequence[float], binary_labels: Sequence[int]) -> tuple[list[tuple[float, float]], float]:
    """ROC points from a descending threshold sweep, and the trapezoidal area.

    Equal scores are one threshold, so a block of ties becomes a single
    (possibly diagonal) segment.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(binary_labels).reshape(-1)
    if s.shape != y.shape:
        raise DimensionError(f"roc_auc: {s.size} scores vs {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("roc_auc: labels must be 0 or 1")
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise ContractError("roc_auc: both classes must be present")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order].astype(np.int64)
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    tps = np.r_[0, np.cumsum(y_sorted)[last]]
    fps = np.r_[0, last + 1] - tps
    points = [(f / neg, t / pos) for f, t in zip(fps.tolist(), tps.tolist())]
    # integer trapezoid sum keeps perfect separation at exactly 1.0
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return points, twice_area / (2.0 * pos * neg)


def one_vs_rest_roc(probs, true_labels) -> tuple[list[Optional[list]], list[Optional[float]]]:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if p.ndim != 2 or p.shape[1] < 2:
        raise DimensionError(f"one_vs_rest_roc: need [samples, n>=2] probabilities, got {p.shape}")
    if p.shape[0] != y.size:
        raise DimensionError(f"one_vs_rest_roc: {p.shape[0]} rows vs {y.size} labels")
    curves: list[Optional[list]] = []
    aucs: list[Optional[float]] = []
    for c in range(p.shape[1]):
        hits = (y == c).astype(np.int64)
        if hits.sum() in (0, hits.size):
            curves.append(None)
            aucs.append(None)
            continue
        pts, a = roc_auc(p[:, c], hits)
        curves.append(pts)
        aucs.append(a)
    return curves, aucs


def attach_roc(report: MetricsReport, probs, true_labels) -> MetricsReport:
    curves, aucs = one_vs_rest_roc(probs, true_labels)
    report.roc = curves
    report.auc_per_class = aucs
    defined = [a for a in aucs if a is not None]
    report.auc = math.fsum(defined) / len(defined) if defined else None
    for k, a in enumerate(aucs):
        if a is None:
            report.flags.append(f"auc[{k}]: undefined, class absent or alone")
    return report
