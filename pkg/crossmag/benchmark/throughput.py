#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Encoder throughput harness.

Timings are wall-clock (``time.perf_counter``) over ``n_patches`` synthetic
patches after ``warmup_batches`` untimed batches, in inference mode on a
single intra-op thread. Only one timing run may be active per process.
"""

import platform
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np
import psutil
import torch

from ..models.vit import VisionTransformer, to_tensor
from ..utils.errors import CrossmagError
from ..utils.logging_setup import get_logger
from .speed import REFERENCE_PATCHES_20X, REFERENCE_PATCHES_5X, SpeedFixture, wsis_per_minute

logger = get_logger(__name__)

SIMULATED_PATCHES_PER_WSI = (REFERENCE_PATCHES_5X, REFERENCE_PATCHES_20X)
_BENCH_LOCK = threading.Lock()


class BenchmarkBusyError(CrossmagError, RuntimeError):
    """Another timing run is already active in this process."""


@dataclass(frozen=True)
class BenchConfig:
    """Settings of the `bench` command: fixture file, which encoders to time and how."""

    fixture_file: Optional[str] = None
    measure: bool = True
    encoders: Tuple[str, ...] = ("student",)
    n_patches: int = 256
    batch_size: int = 32
    warmup_batches: int = 2

    def __post_init__(self):
        if self.batch_size < 1 or self.n_patches < self.batch_size:
            raise ValueError(f"n_patches ({self.n_patches}) must be at least batch_size ({self.batch_size})")
        if self.warmup_batches < 0:
            raise ValueError("warmup_batches must be non-negative")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "BenchConfig":
        values = {key: value for key, value in section.items() if key in cls.__dataclass_fields__}
        if "encoders" in values:
            values["encoders"] = tuple(values["encoders"])
        return cls(**values)


@dataclass
class ThroughputReport:
    """
    Measured encoder throughput.

    Attributes:
        encoder: Encoder configuration
        batch_size: Patches per forward pass
        n_patches: Timed patches
        warmup_batches: Untimed batches before timing
        wall_seconds: Timed wall-clock seconds
        patches_per_second: n_patches / wall_seconds
        hardware: Hardware descriptor
        simulated_wsis_per_minute: Patches per WSI -> WSIs per minute
    """

    encoder: Dict[str, Any]
    batch_size: int
    n_patches: int
    warmup_batches: int
    wall_seconds: float
    patches_per_second: float
    hardware: str
    simulated_wsis_per_minute: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def as_fixture(self, model: str, patches_per_wsi: int, magnification: str = "") -> SpeedFixture:
        """Speed-table row for a simulated slide of ``patches_per_wsi`` patches."""
        return SpeedFixture(
            model=model,
            patches_per_wsi=patches_per_wsi,
            seconds_per_wsi=round(patches_per_wsi / self.patches_per_second, 4),
            magnification=magnification,
            source="measured",
        )


def hardware_descriptor() -> str:
    """Processor, core counts, memory and torch version."""
    memory_gib = psutil.virtual_memory().total / 2**30
    return (
        f"{platform.processor() or platform.machine()} | "
        f"{psutil.cpu_count(logical=False)} cores / {psutil.cpu_count(logical=True)} threads | "
        f"{memory_gib:.1f} GiB | {platform.system()} | torch {torch.__version__}"
    )


@contextmanager
def single_stream() -> Iterator[None]:
    """Pin torch to one intra-op thread for the duration."""
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def time_encoder(
    encoder: VisionTransformer,
    n_patches: int = 256,
    batch_size: int = 32,
    warmup_batches: int = 2,
    seed: int = 0,
) -> ThroughputReport:
    """
    Time inference over ``n_patches`` random patches.

    Args:
        encoder: Encoder (run in eval mode, restored afterwards)
        n_patches: Timed patches
        batch_size: Patches per forward pass
        warmup_batches: Untimed batches
        seed: Seed of the synthetic input

    Returns:
        ThroughputReport: Timing, hardware descriptor and simulated WSIs/min

    Raises:
        ValueError: If n_patches < batch_size
        BenchmarkBusyError: If another timing run is active
    """
    if batch_size < 1 or n_patches < batch_size:
        raise ValueError(f"n_patches ({n_patches}) must be at least batch_size ({batch_size})")
    if not _BENCH_LOCK.acquire(blocking=False):
        raise BenchmarkBusyError("Another benchmark is running in this process")

    was_training = encoder.training
    try:
        side = encoder.config.input_side
        rng = np.random.default_rng(seed)
        images = rng.integers(0, 256, size=(batch_size, side, side, 3), dtype=np.uint8)
        batch = to_tensor(images, dtype=next(encoder.parameters()).dtype)
        encoder.eval()

        with torch.no_grad(), single_stream():
            for _ in range(warmup_batches):
                encoder(batch)
            processed = 0
            started = time.perf_counter()
            while processed < n_patches:
                size = min(batch_size, n_patches - processed)
                encoder(batch[:size])
                processed += size
            wall = time.perf_counter() - started
    finally:
        encoder.train(was_training)
        _BENCH_LOCK.release()

    wall = max(wall, 1e-9)
    per_second = n_patches / wall
    simulated = {p: wsis_per_minute(p / per_second) for p in SIMULATED_PATCHES_PER_WSI}
    report = ThroughputReport(
        encoder=encoder.config.to_dict(),
        batch_size=batch_size,
        n_patches=n_patches,
        warmup_batches=warmup_batches,
        wall_seconds=wall,
        patches_per_second=per_second,
        hardware=hardware_descriptor(),
        simulated_wsis_per_minute=simulated,
    )
    logger.info("Encoder throughput: %.1f patches/s over %d patches (batch %d)", per_second, n_patches, batch_size)
    return report
