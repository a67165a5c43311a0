#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Linear probing on frozen embeddings.

A multinomial logistic regression with L2 penalty is fitted on standardized
embeddings by L-BFGS until the projected gradient norm falls below ``tol`` or
``max_iter`` iterations pass. The encoder is never touched; the probe only
sees precomputed matrices.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from ..utils.logging_setup import get_logger
from .metrics import MetricReport, evaluate_predictions

logger = get_logger(__name__)


class ProbeError(ValueError):
    """Probe inputs are unusable (e.g. a single training class)."""


@dataclass(frozen=True)
class ProbeConfig:
    """Settings of the ``probe`` config section."""

    test_fraction: float = 0.3
    l2: float = 1e-4
    max_iter: int = 500
    tol: float = 1e-5
    n_boot: int = 1000

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "ProbeConfig":
        return cls(**{key: value for key, value in section.items() if key in cls.__dataclass_fields__})


@dataclass
class LinearProbe:
    """
    Fitted linear classifier over standardized embeddings.

    Attributes:
        weights: [d, C]
        bias: [C]
        mean: Per-feature training mean
        scale: Per-feature training standard deviation
        n_iter: Solver iterations
        converged: Whether the gradient tolerance was met
    """

    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int = 0
    converged: bool = False

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, embeddings: np.ndarray) -> np.ndarray:
        x = (np.asarray(embeddings, dtype=np.float64) - self.mean) / self.scale
        return softmax(x @ self.weights + self.bias, axis=1)

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        return self.predict_proba(embeddings).argmax(axis=1)


@dataclass
class ProbeResult:
    """Probe plus its held-out report and split."""

    probe: LinearProbe
    report: MetricReport
    train_indices: np.ndarray
    test_indices: np.ndarray
    extra: Dict[str, Any] = field(default_factory=dict)


def stratified_split(labels: np.ndarray, test_fraction: float, seed: int):
    """
    Per-class shuffled split; every class with two or more samples lands in both parts.

    Returns:
        Tuple of sorted (train_indices, test_indices)
    """
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * members.size))
        if members.size >= 2:
            n_test = min(max(n_test, 1), members.size - 1)
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def fit_logistic(
    x: np.ndarray, y: np.ndarray, n_classes: int, l2: float, max_iter: int, tol: float
) -> LinearProbe:
    """Fit multinomial logistic regression on ``x`` (standardized internally)."""
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    n, d = z.shape
    onehot = np.eye(n_classes)[y]

    def objective(theta: np.ndarray):
        weights = theta[: d * n_classes].reshape(d, n_classes)
        bias = theta[d * n_classes :]
        logits = z @ weights + bias
        log_probs = log_softmax(logits, axis=1)
        loss = -np.sum(onehot * log_probs) / n + 0.5 * l2 * np.sum(weights**2)
        residual = (np.exp(log_probs) - onehot) / n
        grad_w = z.T @ residual + l2 * weights
        grad_b = residual.sum(axis=0)
        return loss, np.concatenate([grad_w.ravel(), grad_b])

    result = minimize(
        objective,
        np.zeros(d * n_classes + n_classes),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tol},
    )
    if not result.success:
        logger.warning("Linear probe stopped before convergence: %s", result.message)
    theta = result.x
    return LinearProbe(
        weights=theta[: d * n_classes].reshape(d, n_classes),
        bias=theta[d * n_classes :],
        mean=mean,
        scale=scale,
        n_iter=int(result.nit),
        converged=bool(result.success),
    )


def linear_probe(
    embeddings: np.ndarray,
    labels: Sequence[int],
    config: ProbeConfig = ProbeConfig(),
    seed: int = 0,
    test_indices: Optional[Sequence[int]] = None,
    n_classes: Optional[int] = None,
) -> ProbeResult:
    """
    Train a linear classifier on frozen embeddings and evaluate on a held-out split.

    Args:
        embeddings: [N, d] features
        labels: [N] integer labels
        config: Probe settings
        seed: Split and bootstrap seed
        test_indices: Fixed held-out rows; a stratified split is drawn otherwise
        n_classes: Number of classes (default: max label + 1)

    Returns:
        ProbeResult: Fitted probe, held-out MetricReport and the split

    Raises:
        ProbeError: If the training split holds a single class or shapes disagree
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ProbeError(f"Embeddings {x.shape} do not match {y.shape[0]} labels")
    n_classes = n_classes or int(y.max()) + 1

    if test_indices is None:
        train_idx, test_idx = stratified_split(y, config.test_fraction, seed)
    else:
        test_idx = np.sort(np.asarray(test_indices, dtype=int))
        train_idx = np.setdiff1d(np.arange(y.size), test_idx)

    if np.unique(y[train_idx]).size < 2:
        raise ProbeError("Linear probe training split contains a single class")
    if test_idx.size == 0:
        raise ProbeError("Linear probe held-out split is empty")

    probe = fit_logistic(x[train_idx], y[train_idx], n_classes, config.l2, config.max_iter, config.tol)
    probs = probe.predict_proba(x[test_idx])
    report = evaluate_predictions(probs, y[test_idx], n_boot=config.n_boot, seed=seed, n_classes=n_classes)
    logger.info(
        "Linear probe: %d train / %d test, acc %.3f, f1 %.3f (%d iterations)",
        train_idx.size,
        test_idx.size,
        report.accuracy,
        report.f1,
        probe.n_iter,
    )
    return ProbeResult(probe=probe, report=report, train_indices=train_idx, test_indices=test_idx)
