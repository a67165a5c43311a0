#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for synthetic slide generation and pyramid tiling.
"""

import numpy as np
import pytest

from crossmag.benchmark import patch_count
from crossmag.pyramid import (
    GeneratorConfig,
    GeometryError,
    decompose_parent,
    downsample_to_5x,
    generate_synthetic_wsi,
    reassemble_children,
    tessellate,
)
from crossmag.pyramid.tiling import CHILD_SIDE, child_index_of_pixel, make_pair


def random_parent(seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(896, 896, 3), dtype=np.uint8)


class TestSyntheticWsi:
    def test_regeneration_is_byte_identical(self, tiny_generator):
        first = generate_synthetic_wsi(tiny_generator, 42)
        second = generate_synthetic_wsi(tiny_generator, 42)
        assert first.pixels.tobytes() == second.pixels.tobytes()
        assert np.array_equal(first.region_labels, second.region_labels)
        assert first.slide_label == second.slide_label
        assert first.id == "wsi_000042"

    def test_different_seeds_differ(self, tiny_generator):
        a = generate_synthetic_wsi(tiny_generator, 1)
        b = generate_synthetic_wsi(tiny_generator, 2)
        assert a.pixels.tobytes() != b.pixels.tobytes()

    def test_region_labels_in_range(self, two_by_two_generator):
        wsi = generate_synthetic_wsi(two_by_two_generator, 5)
        assert wsi.pixels.shape == (1792, 1792, 3)
        assert wsi.pixels.dtype == np.uint8
        assert wsi.region_labels.min() >= 0
        assert wsi.region_labels.max() < 3
        assert 0 <= wsi.slide_label < 3

    def test_slide_label_dominates_region_map(self):
        config = GeneratorConfig(height=1792, width=1792, dominant_fraction=1.0)
        wsi = generate_synthetic_wsi(config, 3)
        assert np.all(wsi.region_labels == wsi.slide_label)

    @pytest.mark.parametrize("height,width", [(900, 896), (896, 0), (448, 896)])
    def test_rejects_unaligned_dimensions(self, height, width):
        with pytest.raises(GeometryError):
            GeneratorConfig(height=height, width=width)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            GeneratorConfig(n_classes=1)


class TestTiling:
    def test_decompose_children_are_sub_blocks(self):
        parent = random_parent()
        children = decompose_parent(parent)
        assert children.shape == (16, 224, 224, 3)
        for i in range(16):
            row, col = CHILD_SIDE * (i // 4), CHILD_SIDE * (i % 4)
            assert np.array_equal(children[i], parent[row : row + CHILD_SIDE, col : col + CHILD_SIDE])

    def test_reassemble_is_bitwise_inverse(self):
        for seed in range(5):
            parent = random_parent(seed)
            assert np.array_equal(reassemble_children(decompose_parent(parent)), parent)

    def test_child_index_of_pixel_matches_decomposition(self):
        parent = np.zeros((896, 896, 3), dtype=np.uint8)
        parent[300, 500] = 255
        children = decompose_parent(parent)
        lit = [i for i in range(16) if children[i].any()]
        assert lit == [child_index_of_pixel(300, 500)]

    def test_downsample_rounds_half_up(self):
        parent = np.zeros((896, 896, 3), dtype=np.uint8)
        parent[0:4, 0:4] = np.array([[1, 1, 0, 0]] * 4)[:, :, None]  # block mean 0.5 -> 1
        parent[0:4, 4:8, 0] = np.array([[1, 0, 0, 0]] * 4)  # channel mean 0.25 -> 0
        parent[4:8, 0:4] = 255
        patch = downsample_to_5x(parent)
        assert patch.shape == (224, 224, 3)
        assert patch[0, 0].tolist() == [1, 1, 1]
        assert patch[0, 1].tolist() == [0, 0, 0]
        assert patch[1, 0].tolist() == [255, 255, 255]

    def test_downsample_matches_block_means(self):
        parent = random_parent(7)
        patch = downsample_to_5x(parent).astype(np.int64)
        means = parent.reshape(224, 4, 224, 4, 3).mean(axis=(1, 3))
        assert np.all(np.abs(patch - means) <= 0.5)

    @pytest.mark.parametrize("shape", [(895, 896, 3), (896, 896), (896, 896, 4)])
    def test_geometry_errors(self, shape):
        with pytest.raises(GeometryError):
            decompose_parent(np.zeros(shape, dtype=np.uint8))
        with pytest.raises(GeometryError):
            downsample_to_5x(np.zeros(shape, dtype=np.uint8))

    def test_tessellate_count_order_and_histograms(self, two_by_two_generator):
        wsi = generate_synthetic_wsi(two_by_two_generator, 9)
        pairs = tessellate(wsi)
        assert [(p.grid_row, p.grid_col) for p in pairs] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        for pair in pairs:
            assert sum(pair.region_histogram) == 896 * 896
            assert len(pair.region_histogram) == 3
            assert pair.slide_id == wsi.id
            assert pair.slide_label == wsi.slide_label
        assert np.array_equal(pairs[3].parent_20x, wsi.pixels[896:, 896:])

    def test_tessellate_background_filter(self, tiny_generator):
        wsi = generate_synthetic_wsi(tiny_generator, 0)
        assert len(tessellate(wsi, background_threshold=0)) == 0
        assert len(tessellate(wsi, background_threshold=None)) == 1

    def test_make_pair_derives_views(self):
        parent = random_parent(3)
        pair = make_pair(parent, 2, 5, "wsi_x", 1, (10, 20))
        assert pair.key == ("wsi_x", 2, 5)
        assert np.array_equal(pair.children_20x, decompose_parent(parent))
        assert np.array_equal(pair.patch_5x, downsample_to_5x(parent))


def test_patch_ratio_is_sixteen_on_aligned_slides():
    rng = np.random.default_rng(0)
    for _ in range(50):
        height, width = (int(v) * 896 for v in rng.integers(1, 40, size=2))
        assert patch_count(width, height, "20x") == 16 * patch_count(width, height, "5x")


def test_tessellation_agrees_with_patch_count(two_by_two_generator):
    wsi = generate_synthetic_wsi(two_by_two_generator, 1)
    assert len(tessellate(wsi)) == patch_count(wsi.width, wsi.height, "5x") == 4
