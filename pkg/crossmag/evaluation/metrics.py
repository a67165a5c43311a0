#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Classification metrics.

AUC uses the Mann-Whitney rank formulation (ties count one half); multiclass
AUC is the macro average of one-vs-rest AUCs over classes that have both
positives and negatives. Macro F1 assigns F1 = 0 to classes that are never
predicted and never present.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from ..utils.logging_setup import get_logger
from .bootstrap import bootstrap_ci

logger = get_logger(__name__)

METRIC_NAMES = ("auc", "accuracy", "f1")


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given labels (e.g. a single class)."""


@dataclass
class MetricReport:
    """
    Point estimates with 95% bootstrap intervals.

    Attributes:
        auc: Area under the ROC curve (NaN when undefined on the full set)
        accuracy: Fraction of correct predictions
        f1: Macro F1
        ci95: Metric name -> (lo, hi)
        n: Number of samples
        note: Names the intervals stretched to reach their point estimate, empty otherwise
    """

    auc: float
    accuracy: float
    f1: float
    ci95: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    n: int = 0
    note: str = ""

    def as_row(self) -> Dict[str, float]:
        """Flat dict with ``auc_lo``/``auc_hi`` style interval columns."""
        row = {"auc": self.auc, "acc": self.accuracy, "f1": self.f1, "n": self.n}
        for name, column in (("auc", "auc"), ("accuracy", "acc"), ("f1", "f1")):
            lo, hi = self.ci95.get(name, (float("nan"), float("nan")))
            row[f"{column}_lo"] = lo
            row[f"{column}_hi"] = hi
        row["ci_note"] = self.note
        return row

    def to_dict(self) -> Dict:
        return asdict(self)


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def auc(scores: Sequence, labels: Sequence) -> float:
    """
    Area under the ROC curve.

    Args:
        scores: [N] scores for the positive (larger) class, or [N, C] class scores
        labels: [N] integer labels

    Returns:
        float: AUC in [0, 1]

    Raises:
        UndefinedMetricError: If fewer than two classes are present
        ValueError: On length mismatch

    >>> auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    0.75
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape[0] != labels.shape[0]:
        raise ValueError(f"scores has {scores.shape[0]} rows, labels has {labels.shape[0]}")

    classes = np.unique(labels)
    if classes.size < 2:
        raise UndefinedMetricError(f"AUC undefined for labels with classes {classes.tolist()}")

    if scores.ndim == 2 and scores.shape[1] == 2:
        scores = scores[:, 1]
    if scores.ndim == 1:
        if classes.size != 2:
            raise UndefinedMetricError(f"Binary AUC needs exactly two classes, got {classes.tolist()}")
        return _binary_auc(scores, labels == classes[1])

    per_class = [_binary_auc(scores[:, c], labels == c) for c in classes if 0 <= c < scores.shape[1]]
    return float(np.mean(per_class))


def accuracy(preds: Sequence, labels: Sequence) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    return float(np.mean(preds == labels))


def macro_f1(preds: Sequence, labels: Sequence, n_classes: Optional[int] = None) -> float:
    """
    Macro-averaged F1.

    Averages over ``range(n_classes)`` when given, otherwise over the classes
    seen in ``preds`` or ``labels``.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    classes = range(n_classes) if n_classes is not None else np.union1d(preds, labels)
    scores = []
    for c in classes:
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(scores)) if scores else 0.0


def classification_metrics(preds: Sequence, labels: Sequence, n_classes: Optional[int] = None) -> Tuple[float, float]:
    """
    Accuracy and macro F1.

    >>> classification_metrics([0, 0, 0], [0, 0, 0], n_classes=3)
    (1.0, 0.3333333333333333)
    """
    return accuracy(preds, labels), macro_f1(preds, labels, n_classes)


def _scores_for_auc(probs: np.ndarray) -> np.ndarray:
    return probs[:, 1] if probs.ndim == 2 and probs.shape[1] == 2 else probs


def evaluate_predictions(
    probs: Sequence, labels: Sequence, n_boot: int = 1000, seed: int = 0, n_classes: Optional[int] = None
) -> MetricReport:
    """
    Point metrics and bootstrap intervals for class probabilities.

    Predictions are the argmax of ``probs``. Intervals are the 2.5 and 97.5
    bootstrap percentiles, stretched when needed so that each contains its
    point estimate; a stretched interval is no longer a percentile interval and
    is named in ``note``.

    Args:
        probs: [N, C] class probabilities
        labels: [N] integer labels
        n_boot: Bootstrap resamples
        seed: Resampling seed
        n_classes: Number of classes (default: ``probs.shape[1]``)

    Returns:
        MetricReport: Point estimates and CIs
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = n_classes or probs.shape[1]
    preds = probs.argmax(axis=1)
    scores = _scores_for_auc(probs)

    try:
        point_auc = auc(scores, labels)
    except UndefinedMetricError:
        logger.warning("AUC undefined on %d samples with a single class", labels.size)
        point_auc = float("nan")
    point_acc, point_f1 = classification_metrics(preds, labels, n_classes)

    ci95: Dict[str, Tuple[float, float]] = {}
    if labels.size >= 2 and n_boot > 0:
        if not np.isnan(point_auc):
            ci95["auc"] = bootstrap_ci(auc, scores, labels, n_boot=n_boot, seed=seed)
        ci95["accuracy"] = bootstrap_ci(accuracy, preds, labels, n_boot=n_boot, seed=seed)
        ci95["f1"] = bootstrap_ci(
            lambda p, y: macro_f1(p, y, n_classes), preds, labels, n_boot=n_boot, seed=seed
        )
    points = {"auc": point_auc, "accuracy": point_acc, "f1": point_f1}
    stretched = []
    for name, (lo, hi) in list(ci95.items()):
        if not lo <= points[name] <= hi:
            stretched.append(name)
            ci95[name] = (min(lo, points[name]), max(hi, points[name]))
    note = f"interval stretched to the point estimate: {', '.join(stretched)}" if stretched else ""

    return MetricReport(auc=point_auc, accuracy=point_acc, f1=point_f1, ci95=ci95, n=int(labels.size), note=note)
