"""Patch-count geometry, speed tables and the encoder throughput harness."""

from .speed import (
    ArithmeticMismatchError,
    SpeedFixture,
    SpeedTable,
    derive_rows,
    emit_speed_table,
    load_speed_fixtures,
    patch_count,
    read_speed_table,
    speedup,
    wsis_per_minute,
)
from .throughput import BenchConfig, BenchmarkBusyError, ThroughputReport, hardware_descriptor, time_encoder

__all__ = [
    "ArithmeticMismatchError",
    "BenchConfig",
    "BenchmarkBusyError",
    "SpeedFixture",
    "SpeedTable",
    "ThroughputReport",
    "derive_rows",
    "emit_speed_table",
    "hardware_descriptor",
    "load_speed_fixtures",
    "patch_count",
    "read_speed_table",
    "speedup",
    "time_encoder",
    "wsis_per_minute",
]
