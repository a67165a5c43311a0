#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Performance tests for slide generation, tessellation, manifests and encoders.
Measures execution time and memory usage with generous bounds.
"""

import os
import time
from contextlib import contextmanager

import numpy as np
import psutil
import pytest

from crossmag.mil import embed_patches
from crossmag.models import build_encoder, checkpointed_forward, preset
from crossmag.pyramid import GeneratorConfig, build_manifest, generate_synthetic_wsi, tessellate


class TimeMeasurement:
    """Elapsed wall time of a measured block."""

    def __init__(self):
        self.start_time = 0.0
        self.elapsed = 0.0


class MemoryMeasurement:
    """Resident-memory growth of a measured block."""

    def __init__(self):
        self.start_mem = 0
        self.used = 0


@contextmanager
def measure_time():
    measurement = TimeMeasurement()
    measurement.start_time = time.perf_counter()
    try:
        yield measurement
    finally:
        measurement.elapsed = time.perf_counter() - measurement.start_time


@contextmanager
def measure_memory():
    measurement = MemoryMeasurement()
    process = psutil.Process(os.getpid())
    measurement.start_mem = process.memory_info().rss
    try:
        yield measurement
    finally:
        measurement.used = process.memory_info().rss - measurement.start_mem


@pytest.fixture
def slide_pairs():
    config = GeneratorConfig(height=1792, width=1792, n_classes=3)
    pairs = []
    for seed in range(4):
        pairs.extend(tessellate(generate_synthetic_wsi(config, seed)))
    return pairs


def test_generation_and_tessellation_speed():
    config = GeneratorConfig(height=1792, width=1792, n_classes=3)
    with measure_time() as timer:
        for seed in range(8):
            pairs = tessellate(generate_synthetic_wsi(config, seed))
            assert len(pairs) == 4
    assert timer.elapsed < 30.0, f"Generating 8 slides took {timer.elapsed:.2f}s"


def test_tessellation_memory():
    config = GeneratorConfig(height=1792, width=1792, n_classes=3)
    with measure_memory() as memory:
        for seed in range(8):
            tessellate(generate_synthetic_wsi(config, seed))
    max_memory = 500 * 1024 * 1024
    assert memory.used < max_memory, f"Memory usage too high: {memory.used / 1024 / 1024:.1f}MB"


@pytest.mark.slow
def test_parallel_manifest_is_not_slower(slide_pairs, tmp_path):
    with measure_time() as sequential:
        build_manifest(slide_pairs, tmp_path / "seq", workers=1)
    with measure_time() as parallel:
        build_manifest(slide_pairs, tmp_path / "par", workers=4)
    # Pool start-up dominates at this size; only guard against pathological slowdowns
    assert parallel.elapsed < 5 * sequential.elapsed + 5.0


def test_checkpointing_retains_fewer_activations():
    encoder = build_encoder(preset("toy_student", depth=4), seed=0).train()
    batch = np.random.default_rng(0).integers(0, 256, size=(4, 224, 224, 3), dtype=np.uint8)
    plain = checkpointed_forward(encoder, batch, use_checkpoint=False)
    checkpointed = checkpointed_forward(encoder, batch, use_checkpoint=True)
    assert checkpointed.retained_elements < plain.retained_elements


@pytest.mark.slow
def test_embedding_throughput(synthetic_pairs):
    encoder = build_encoder(preset("toy_student"), seed=0)
    patches = np.stack([pair.patch_5x for pair in synthetic_pairs] * 16)
    with measure_time() as timer:
        embeddings = embed_patches(encoder, patches, batch_size=16)
    assert embeddings.shape == (len(patches), 16)
    assert timer.elapsed < 60.0, f"Embedding {len(patches)} patches took {timer.elapsed:.2f}s"
