"""
Test configuration and fixtures for crossmag tests.

Provides tiny generator settings, toy encoders, synthetic bags and temporary
run directories shared across the crossmag test suite.
"""

from pathlib import Path
from typing import Callable, List

import numpy as np
import pytest
import torch
import yaml

from crossmag.mil import Bag
from crossmag.models import build_encoder, preset
from crossmag.pyramid import GeneratorConfig, generate_synthetic_wsi, tessellate


@pytest.fixture(autouse=True)
def setup_test_env(monkeypatch):
    """Reset the module-level config cache and pin torch to one thread."""
    monkeypatch.setattr("crossmag.utils.config_loader._CONFIG_CACHE", None)
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(previous)


@pytest.fixture
def tiny_generator():
    """One-tile slides: 896x896 at 20x."""
    return GeneratorConfig(height=896, width=896, n_classes=2, noise_std=4.0)


@pytest.fixture
def two_by_two_generator():
    """Four-tile slides with three phenotype classes."""
    return GeneratorConfig(height=1792, width=1792, n_classes=3)


@pytest.fixture
def synthetic_pairs(tiny_generator):
    """Pairs from four one-tile slides."""
    pairs = []
    for seed in range(4):
        pairs.extend(tessellate(generate_synthetic_wsi(tiny_generator, seed)))
    return pairs


@pytest.fixture
def toy_student():
    """Two-block student (d_S=16, G=8)."""
    return build_encoder(preset("toy_student", depth=2), seed=1)


@pytest.fixture
def toy_teacher():
    """Two-block frozen teacher (d_T=32)."""
    return build_encoder(preset("toy_teacher", depth=2), seed=0)


@pytest.fixture
def make_bags() -> Callable[..., List[Bag]]:
    """
    Factory for linearly separable bags.

    Positive bags contain a few instances shifted along the first axis;
    negative bags are pure noise.
    """

    def _make(n_slides: int = 20, dim: int = 8, n_instances: int = 12, shift: float = 3.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        bags = []
        for i in range(n_slides):
            label = i % 2
            embeddings = rng.normal(size=(n_instances, dim)).astype(np.float32)
            if label:
                embeddings[: n_instances // 3, 0] += shift
            bags.append(Bag(slide_id=f"slide_{i:03d}", embeddings=embeddings, label=label))
        return bags

    return _make


@pytest.fixture
def run_config(tmp_path) -> Callable[..., Path]:
    """Factory writing a small config file; keyword sections update the defaults."""

    def _write(**sections) -> Path:
        config = {
            "global": {"seed": 0, "run_dir": str(tmp_path / "run"), "log_level": "INFO"},
            "synth": {"n_slides": 4, "height": 896, "width": 896},
            "encoder": {"student_overrides": {"depth": 2}, "teacher_overrides": {"depth": 2}},
            "distill": {"total_steps": 3, "batch_size": 2, "log_every": 1},
        }
        for name, values in sections.items():
            config.setdefault(name, {}).update(values)
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(config), encoding="utf-8")
        return path

    return _write
