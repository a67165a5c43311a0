#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Paired Augmentation
-------------------

Applies one transform to both magnifications of a PyramidPatchPair. The
parent is augmented and its children are re-derived by decomposition, never
transformed on their own, so the 16:1 spatial correspondence survives.

Supported ops: horizontal flip, vertical flip, 90-degree rotation
(counter-clockwise, ``k`` quarter turns), brightness scale and contrast scale
around a fixed mid-grey pivot. Every op is pixel-exact and deterministic.
"""

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from ..utils.logging_setup import get_logger
from .tiling import GRID_SIDE, PyramidPatchPair

logger = get_logger(__name__)

GEOMETRIC_OPS = ("hflip", "vflip", "rot90")
PHOTOMETRIC_OPS = ("brightness", "contrast")
CONTRAST_PIVOT = 128.0


@dataclass(frozen=True)
class AugOp:
    """
    A single augmentation step.

    Attributes:
        name: One of hflip, vflip, rot90, brightness, contrast
        factor: Scale for brightness/contrast (dimensionless)
        k: Quarter turns for rot90
    """

    name: str
    factor: float = 1.0
    k: int = 1

    def __post_init__(self):
        if self.name not in GEOMETRIC_OPS + PHOTOMETRIC_OPS:
            raise ValueError(f"Unknown augmentation op: {self.name}")
        if self.name in PHOTOMETRIC_OPS and self.factor < 0:
            raise ValueError(f"{self.name} factor must be non-negative, got {self.factor}")


@dataclass(frozen=True)
class AugmentationSpec:
    """
    An ordered list of ops plus the seed it was drawn from.

    Attributes:
        seed: Seed used by :func:`sample_spec` (informational for fixed specs)
        ops: Ops applied in order
    """

    seed: int = 0
    ops: Tuple[AugOp, ...] = field(default_factory=tuple)

    @property
    def is_identity(self) -> bool:
        return len(self.ops) == 0


@dataclass(frozen=True)
class AugmentationPolicy:
    """Probabilities and ranges used when sampling a spec."""

    flip_prob: float = 0.5
    rotate_prob: float = 0.5
    brightness_range: Tuple[float, float] = (0.85, 1.15)
    contrast_range: Tuple[float, float] = (0.85, 1.15)
    photometric_prob: float = 0.8


def sample_spec(seed: int, policy: AugmentationPolicy = AugmentationPolicy()) -> AugmentationSpec:
    """
    Draw an augmentation spec from ``policy``; the result depends only on the seed.

    Args:
        seed: Random seed
        policy: Sampling probabilities and ranges

    Returns:
        AugmentationSpec: Ordered ops
    """
    rng = np.random.default_rng(seed)
    ops = []
    if rng.random() < policy.flip_prob:
        ops.append(AugOp("hflip"))
    if rng.random() < policy.flip_prob:
        ops.append(AugOp("vflip"))
    if rng.random() < policy.rotate_prob:
        ops.append(AugOp("rot90", k=int(rng.integers(1, 4))))
    if rng.random() < policy.photometric_prob:
        ops.append(AugOp("brightness", factor=float(rng.uniform(*policy.brightness_range))))
    if rng.random() < policy.photometric_prob:
        ops.append(AugOp("contrast", factor=float(rng.uniform(*policy.contrast_range))))
    return AugmentationSpec(seed=seed, ops=tuple(ops))


def _apply_geometric(array: np.ndarray, op: AugOp) -> np.ndarray:
    if op.name == "hflip":
        return array[:, ::-1]
    if op.name == "vflip":
        return array[::-1, :]
    return np.rot90(array, k=op.k, axes=(0, 1))


def _apply_photometric(image: np.ndarray, op: AugOp) -> np.ndarray:
    values = image.astype(np.float64)
    if op.name == "brightness":
        values = values * op.factor
    else:
        values = (values - CONTRAST_PIVOT) * op.factor + CONTRAST_PIVOT
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def apply_spec(image: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    """
    Apply ``spec`` to a single HxWx3 image.

    Args:
        image: uint8 image
        spec: Augmentation spec

    Returns:
        np.ndarray: Augmented contiguous uint8 image
    """
    out = image
    for op in spec.ops:
        if op.name in GEOMETRIC_OPS:
            out = _apply_geometric(out, op)
        else:
            out = _apply_photometric(out, op)
    return np.ascontiguousarray(out)


def child_grid_permutation(spec: AugmentationSpec) -> np.ndarray:
    """
    Map from augmented child position to source child index.

    ``decompose(augment(parent))[j] == augment(decompose(parent)[perm[j]])``.

    >>> child_grid_permutation(AugmentationSpec(ops=(AugOp("hflip"),)))[:4].tolist()
    [3, 2, 1, 0]
    """
    grid = np.arange(GRID_SIDE * GRID_SIDE).reshape(GRID_SIDE, GRID_SIDE)
    for op in spec.ops:
        if op.name in GEOMETRIC_OPS:
            grid = _apply_geometric(grid, op)
    return np.ascontiguousarray(grid).ravel()


def paired_augment(pair: PyramidPatchPair, spec: AugmentationSpec) -> PyramidPatchPair:
    """
    Apply the same transform at both magnifications.

    Args:
        pair: Source pair
        spec: Augmentation spec

    Returns:
        PyramidPatchPair: Augmented pair with children re-derived from the augmented parent
    """
    if spec.is_identity:
        return pair
    return pair.with_images(apply_spec(pair.parent_20x, spec), apply_spec(pair.patch_5x, spec))


def augment_batch(pairs: Sequence[PyramidPatchPair], seeds: Sequence[int], policy: AugmentationPolicy) -> list:
    """Augment each pair with a spec sampled from its own seed."""
    return [paired_augment(pair, sample_spec(seed, policy)) for pair, seed in zip(pairs, seeds)]
