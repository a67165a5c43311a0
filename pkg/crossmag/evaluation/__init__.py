"""Metrics, bootstrap intervals, paired significance tests, linear probing and embedding export."""

from .bootstrap import bootstrap_ci, bootstrap_distribution
from .export import export_embeddings, read_embeddings
from .metrics import (
    MetricReport,
    UndefinedMetricError,
    accuracy,
    auc,
    classification_metrics,
    evaluate_predictions,
    macro_f1,
)
from .probe import LinearProbe, ProbeConfig, ProbeError, ProbeResult, linear_probe, stratified_split
from .reports import FOLD_COLUMNS, METRIC_COLUMNS, PAIRED_COLUMNS, summarize_folds, write_table
from .significance import PairedTestResult, bootstrap_f1_test, delong_test, mcnemar_test

__all__ = [
    "FOLD_COLUMNS",
    "METRIC_COLUMNS",
    "PAIRED_COLUMNS",
    "LinearProbe",
    "MetricReport",
    "PairedTestResult",
    "ProbeConfig",
    "ProbeError",
    "ProbeResult",
    "UndefinedMetricError",
    "accuracy",
    "auc",
    "bootstrap_ci",
    "bootstrap_distribution",
    "bootstrap_f1_test",
    "classification_metrics",
    "delong_test",
    "evaluate_predictions",
    "export_embeddings",
    "linear_probe",
    "macro_f1",
    "mcnemar_test",
    "stratified_split",
    "read_embeddings",
    "summarize_folds",
    "write_table",
]
