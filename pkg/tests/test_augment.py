#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for paired cross-magnification augmentation.
"""

import numpy as np
import pytest

from crossmag.pyramid import (
    AugmentationPolicy,
    AugmentationSpec,
    AugOp,
    child_grid_permutation,
    decompose_parent,
    downsample_to_5x,
    paired_augment,
    sample_spec,
)
from crossmag.pyramid.augment import GEOMETRIC_OPS, apply_spec, augment_batch
from crossmag.pyramid.tiling import make_pair


@pytest.fixture(scope="module")
def parents():
    rng = np.random.default_rng(0)
    return [rng.integers(0, 256, size=(896, 896, 3), dtype=np.uint8) for _ in range(4)]


def test_sample_spec_depends_only_on_seed():
    policy = AugmentationPolicy()
    assert sample_spec(17, policy) == sample_spec(17, policy)
    specs = {sample_spec(seed, policy) for seed in range(50)}
    assert len(specs) > 10


def test_identity_spec_returns_pair_unchanged(parents):
    pair = make_pair(parents[0], 0, 0, "s")
    assert paired_augment(pair, AugmentationSpec()) is pair


def test_disabled_policy_yields_identity():
    policy = AugmentationPolicy(flip_prob=0.0, rotate_prob=0.0, photometric_prob=0.0)
    assert all(sample_spec(seed, policy).is_identity for seed in range(20))


def test_hflip_permutation_matches_grid():
    perm = child_grid_permutation(AugmentationSpec(ops=(AugOp("hflip"),)))
    assert perm.reshape(4, 4).tolist() == [[3, 2, 1, 0], [7, 6, 5, 4], [11, 10, 9, 8], [15, 14, 13, 12]]


def test_rot90_permutation_is_a_permutation():
    for k in (1, 2, 3):
        perm = child_grid_permutation(AugmentationSpec(ops=(AugOp("rot90", k=k),)))
        assert sorted(perm.tolist()) == list(range(16))


def test_augment_tile_commutation(parents):
    """Children of the augmented parent are the augmented children, reindexed."""
    for case in range(200):
        parent = parents[case % len(parents)]
        spec = sample_spec(case)
        augmented = decompose_parent(apply_spec(parent, spec))
        children = decompose_parent(parent)
        perm = child_grid_permutation(spec)
        for j in (0, 5, 10, 15):
            assert np.array_equal(augmented[j], apply_spec(children[perm[j]], spec))


def test_geometric_ops_commute_with_downsampling(parents):
    for seed in range(40):
        ops = tuple(op for op in sample_spec(seed).ops if op.name in GEOMETRIC_OPS)
        spec = AugmentationSpec(seed=seed, ops=ops)
        parent = parents[seed % len(parents)]
        assert np.array_equal(downsample_to_5x(apply_spec(parent, spec)), apply_spec(downsample_to_5x(parent), spec))


def test_paired_augment_applies_same_transform(parents):
    pair = make_pair(parents[1], 1, 2, "s", 1, (3, 4))
    spec = AugmentationSpec(ops=(AugOp("vflip"), AugOp("rot90", k=3), AugOp("brightness", factor=1.1)))
    out = paired_augment(pair, spec)
    assert np.array_equal(out.parent_20x, apply_spec(pair.parent_20x, spec))
    assert np.array_equal(out.patch_5x, apply_spec(pair.patch_5x, spec))
    assert np.array_equal(out.children_20x, decompose_parent(out.parent_20x))
    assert out.key == pair.key
    assert out.region_histogram == pair.region_histogram


def test_photometric_ops_clip_and_pivot():
    image = np.array([[[0, 128, 255]]], dtype=np.uint8)
    brighter = apply_spec(image, AugmentationSpec(ops=(AugOp("brightness", factor=2.0),)))
    assert brighter.tolist() == [[[0, 255, 255]]]
    flat = apply_spec(image, AugmentationSpec(ops=(AugOp("contrast", factor=0.0),)))
    assert flat.tolist() == [[[128, 128, 128]]]


def test_invalid_ops_rejected():
    with pytest.raises(ValueError):
        AugOp("shear")
    with pytest.raises(ValueError):
        AugOp("brightness", factor=-0.5)


def test_augment_batch_uses_per_pair_seeds(parents):
    pairs = [make_pair(parents[i], 0, i, "s") for i in range(2)]
    out = augment_batch(pairs, [3, 4], AugmentationPolicy())
    assert np.array_equal(out[0].parent_20x, paired_augment(pairs[0], sample_spec(3)).parent_20x)
    assert np.array_equal(out[1].parent_20x, paired_augment(pairs[1], sample_spec(4)).parent_20x)
