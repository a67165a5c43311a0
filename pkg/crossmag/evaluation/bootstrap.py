#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Percentile bootstrap.

Resamples are drawn with replacement from ``numpy.random.default_rng(seed)``,
so identical inputs and seed give identical intervals. A resample on which
the metric is undefined (raises ``ValueError``, e.g. a single-class AUC) is
redrawn and the number of redraws is logged.
"""

from typing import Callable, Tuple

import numpy as np

from ..utils.logging_setup import get_logger

logger = get_logger(__name__)

N_BOOT = 1000
CI_PERCENTILES = (2.5, 97.5)
MAX_REDRAW_FACTOR = 100


def bootstrap_distribution(
    metric_fn: Callable[..., float], *arrays: np.ndarray, n_boot: int = N_BOOT, seed: int = 0
) -> Tuple[np.ndarray, int]:
    """
    Metric values over ``n_boot`` paired resamples of ``arrays``.

    Returns:
        Tuple of (values [n_boot], number of redrawn resamples)

    Raises:
        ValueError: If fewer than two samples, or redraws keep failing
    """
    arrays = tuple(np.asarray(a) for a in arrays)
    n = arrays[0].shape[0]
    if n < 2:
        raise ValueError(f"Bootstrap needs at least 2 samples, got {n}")
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("Bootstrap arrays must have the same length")

    rng = np.random.default_rng(seed)
    values = np.empty(n_boot, dtype=np.float64)
    redrawn = 0
    filled = 0
    while filled < n_boot:
        idx = rng.integers(0, n, size=n)
        try:
            values[filled] = metric_fn(*(a[idx] for a in arrays))
        except ValueError:
            redrawn += 1
            if redrawn > MAX_REDRAW_FACTOR * n_boot:
                raise ValueError("Metric undefined on too many bootstrap resamples") from None
            continue
        filled += 1
    if redrawn:
        logger.warning("Redrew %d bootstrap resamples where the metric was undefined", redrawn)
    return values, redrawn


def bootstrap_ci(
    metric_fn: Callable[[np.ndarray, np.ndarray], float],
    values: np.ndarray,
    labels: np.ndarray,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> Tuple[float, float]:
    """
    95% percentile interval of ``metric_fn(values, labels)``.

    Args:
        metric_fn: Metric taking (values, labels)
        values: Predictions or scores
        labels: Ground truth
        n_boot: Number of resamples
        seed: Resampling seed

    Returns:
        Tuple[float, float]: (lo, hi)
    """
    distribution, _ = bootstrap_distribution(metric_fn, values, labels, n_boot=n_boot, seed=seed)
    lo, hi = np.percentile(distribution, CI_PERCENTILES)
    return float(lo), float(hi)
