#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""CSV report tables for metrics, paired tests and fold summaries."""

from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import pandas as pd

from ..utils.logging_setup import get_logger

logger = get_logger(__name__)

METRIC_COLUMNS = ["task", "model", "fold", "auc", "auc_lo", "auc_hi", "acc", "f1", "f1_lo", "f1_hi"]
PAIRED_COLUMNS = ["task", "model_a", "model_b", "test", "statistic", "p"]
FOLD_COLUMNS = ["fold", "mode", "k", "auc", "acc", "f1"]


def to_frame(rows: Iterable[Dict], columns: Sequence[str]) -> pd.DataFrame:
    """Rows as a DataFrame with ``columns`` first, extra keys after them."""
    frame = pd.DataFrame(list(rows))
    for column in columns:
        if column not in frame.columns:
            frame[column] = pd.NA
    extra = [c for c in frame.columns if c not in columns]
    return frame[list(columns) + extra]


def write_table(rows: Iterable[Dict], path: Union[str, Path], columns: Sequence[str]) -> Path:
    """Write ``rows`` as CSV and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = to_frame(rows, columns)
    frame.to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def summarize_folds(frame: pd.DataFrame, by: List[str], metrics: Sequence[str] = ("auc", "acc", "f1")) -> pd.DataFrame:
    """
    Mean and sample standard deviation of ``metrics`` per ``by`` group.

    Columns come out as ``<metric>_mean``, ``<metric>_std`` plus ``n_folds``.
    """
    grouped = frame.groupby(by, sort=False)
    summary = grouped[list(metrics)].agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary["n_folds"] = grouped.size()
    return summary.reset_index()
