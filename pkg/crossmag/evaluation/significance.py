#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Paired significance tests between two models evaluated on the same samples.

- DeLong: correlated-AUC comparison from placement-value covariances.
- McNemar: discordant correct/incorrect counts; exact binomial p below 25
  discordant pairs, continuity-corrected chi-square otherwise.
- Bootstrap F1: paired resamples of the macro-F1 difference.

Every test is total: degenerate inputs yield p = 1 with ``flagged`` set.
Swapping the two models flips the sign of ``statistic`` and ``delta`` only.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import stats

from ..utils.logging_setup import get_logger
from .bootstrap import N_BOOT, bootstrap_distribution
from .metrics import UndefinedMetricError, auc, macro_f1

logger = get_logger(__name__)

TESTS = ("delong", "mcnemar", "bootstrap_f1")
EXACT_MCNEMAR_LIMIT = 25
VARIANCE_FLOOR = 1e-15


@dataclass(frozen=True)
class PairedTestResult:
    """
    Result of a paired test.

    Attributes:
        test: One of delong, mcnemar, bootstrap_f1
        statistic: Signed test statistic (positive favours model a)
        p_value: Two-sided p-value in [0, 1]
        delta: Metric difference a - b (AUC, accuracy or macro F1)
        flagged: True when a degenerate-case convention set p = 1
        note: How the p-value was obtained
    """

    test: str
    statistic: float
    p_value: float
    delta: float = 0.0
    flagged: bool = False
    note: str = ""

    def __post_init__(self):
        if self.test not in TESTS:
            raise ValueError(f"Unknown test: {self.test}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value {self.p_value} outside [0, 1]")

    def to_dict(self) -> Dict:
        return asdict(self)


def _check_aligned(*arrays: np.ndarray) -> None:
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"Paired inputs must have the same length, got {sorted(lengths)}")


def _delong_covariance(scores: np.ndarray, positive: np.ndarray):
    """AUCs and their covariance for the rows of ``scores`` [k, N]."""
    pos = scores[:, positive]
    neg = scores[:, ~positive]
    m, n = pos.shape[1], neg.shape[1]
    tx = stats.rankdata(pos, axis=1)
    ty = stats.rankdata(neg, axis=1)
    tz = stats.rankdata(np.concatenate([pos, neg], axis=1), axis=1)
    aucs = (tx.sum(axis=1) / m - (m + 1) / 2.0) / n
    v01 = (tz[:, :m] - tx) / n
    v10 = 1.0 - (tz[:, m:] - ty) / m
    covariance = np.atleast_2d(np.cov(v01)) / m + np.atleast_2d(np.cov(v10)) / n
    return aucs, covariance


def delong_test(scores_a: Sequence, scores_b: Sequence, labels: Sequence) -> PairedTestResult:
    """
    DeLong test for two correlated ROC AUCs.

    Args:
        scores_a: [N] positive-class scores of model a
        scores_b: [N] positive-class scores of model b
        labels: [N] binary labels

    Returns:
        PairedTestResult: ``statistic`` is the z score, ``delta`` = auc(a) - auc(b)

    Raises:
        UndefinedMetricError: If labels are not binary with both classes present
    """
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    labels = np.asarray(labels)
    _check_aligned(scores_a, scores_b, labels)
    classes = np.unique(labels)
    if classes.size != 2:
        raise UndefinedMetricError(f"DeLong test needs binary labels, got classes {classes.tolist()}")

    delta = auc(scores_a, labels) - auc(scores_b, labels)
    positive = labels == classes[1]
    if positive.sum() < 2 or (~positive).sum() < 2:
        logger.warning("DeLong variance undefined with fewer than two samples per class; p set to 1")
        return PairedTestResult("delong", 0.0, 1.0, delta=delta, flagged=True, note="too few samples per class")

    _, covariance = _delong_covariance(np.vstack([scores_a, scores_b]), positive)
    variance = covariance[0, 0] + covariance[1, 1] - 2.0 * covariance[0, 1]
    if not np.isfinite(variance) or variance <= VARIANCE_FLOOR:
        logger.warning("DeLong variance is degenerate (%.3g); p set to 1", variance)
        return PairedTestResult("delong", 0.0, 1.0, delta=delta, flagged=True, note="degenerate variance")

    z = delta / np.sqrt(variance)
    p_value = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return PairedTestResult("delong", float(z), p_value, delta=delta, note="two-sided normal")


def mcnemar_test(preds_a: Sequence, preds_b: Sequence, labels: Sequence) -> PairedTestResult:
    """
    McNemar test on paired correctness.

    b counts samples model a gets right and model b gets wrong; c the reverse.
    The statistic is the continuity-corrected chi-square, signed by b - c.

    >>> round(mcnemar_test([1] * 10, [0] * 10, [1] * 10).p_value, 6)
    0.001953
    """
    preds_a = np.asarray(preds_a)
    preds_b = np.asarray(preds_b)
    labels = np.asarray(labels)
    _check_aligned(preds_a, preds_b, labels)

    correct_a = preds_a == labels
    correct_b = preds_b == labels
    b = int(np.sum(correct_a & ~correct_b))
    c = int(np.sum(~correct_a & correct_b))
    delta = float(correct_a.mean() - correct_b.mean()) if labels.size else 0.0

    if b + c == 0:
        logger.warning("McNemar test has no discordant pairs; p set to 1")
        return PairedTestResult("mcnemar", 0.0, 1.0, delta=delta, flagged=True, note="no discordant pairs")

    chi_square = max(abs(b - c) - 1, 0) ** 2 / (b + c)
    statistic = float(np.sign(b - c) * chi_square)
    if b + c < EXACT_MCNEMAR_LIMIT:
        p_value = stats.binomtest(b, b + c, 0.5, alternative="two-sided").pvalue
        note = f"exact binomial (b={b}, c={c})"
    else:
        p_value = stats.chi2.sf(chi_square, df=1)
        note = f"chi-square with continuity correction (b={b}, c={c})"
    return PairedTestResult("mcnemar", statistic, float(min(1.0, p_value)), delta=delta, note=note)


def bootstrap_f1_test(
    preds_a: Sequence,
    preds_b: Sequence,
    labels: Sequence,
    n_boot: int = N_BOOT,
    seed: int = 0,
    n_classes: Optional[int] = None,
) -> PairedTestResult:
    """
    Paired bootstrap test on the macro-F1 difference.

    The same resampled indices are applied to both models. With d the
    resampled differences F1(a) - F1(b), ``p = min(1, 2 * min(P(d <= 0), P(d >= 0)))``.

    Args:
        preds_a: [N] predictions of model a
        preds_b: [N] predictions of model b
        labels: [N] labels
        n_boot: Number of resamples
        seed: Resampling seed
        n_classes: Classes averaged by macro F1 (default: all classes seen)

    Returns:
        PairedTestResult: ``statistic`` and ``delta`` are the observed F1(a) - F1(b)
    """
    preds_a = np.asarray(preds_a)
    preds_b = np.asarray(preds_b)
    labels = np.asarray(labels)
    _check_aligned(preds_a, preds_b, labels)
    if n_classes is None:
        n_classes = int(max(preds_a.max(), preds_b.max(), labels.max())) + 1

    def difference(a: np.ndarray, b: np.ndarray, y: np.ndarray) -> float:
        return macro_f1(a, y, n_classes) - macro_f1(b, y, n_classes)

    observed = difference(preds_a, preds_b, labels)
    deltas, _ = bootstrap_distribution(difference, preds_a, preds_b, labels, n_boot=n_boot, seed=seed)
    p_value = min(1.0, 2.0 * min(float(np.mean(deltas <= 0.0)), float(np.mean(deltas >= 0.0))))
    return PairedTestResult(
        "bootstrap_f1",
        observed,
        p_value,
        delta=observed,
        note="p = 2 * min(P(d <= 0), P(d >= 0)) over paired resamples, d = F1(a) - F1(b)",
    )
