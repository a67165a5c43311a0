#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tiling Module
-------------

Cuts slides into non-overlapping 896x896 parent tiles at 20x and derives the
two views used for cross-magnification training:

- 16 children of 224x224 at 20x (row-major 4x4 grid)
- one 224x224 patch at 5x (4x box-filter downscale of the parent)

Example:
    from crossmag.pyramid.tiling import tessellate
    pairs = tessellate(wsi)
    print(len(pairs))  # (H / 896) * (W / 896)

Child index arithmetic:

>>> child_index_of_pixel(300, 500)
6
"""

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, List, Optional, Tuple

import numpy as np

from ..utils.logging_setup import get_logger

if TYPE_CHECKING:
    from .synthetic import SyntheticWsi

logger = get_logger(__name__)

PARENT_SIDE = 896
CHILD_SIDE = 224
GRID_SIDE = 4
N_CHILDREN = GRID_SIDE * GRID_SIDE
DOWNSCALE = PARENT_SIDE // CHILD_SIDE


class GeometryError(ValueError):
    """Image or slide dimensions violate the pyramid geometry."""


@dataclass(frozen=True)
class PyramidPatchPair:
    """
    One 20x parent tile with its children and its 5x counterpart.

    Attributes:
        parent_20x: 896 x 896 x 3 uint8 tile
        children_20x: 16 x 224 x 224 x 3 uint8, row-major grid order
        patch_5x: 224 x 224 x 3 uint8 box-filter downscale of the parent
        grid_row: Tile row in the slide
        grid_col: Tile column in the slide
        slide_id: Source slide identifier
        slide_label: Slide-level class of the source slide
        region_histogram: Pixel count per phenotype class inside the tile
    """

    parent_20x: np.ndarray
    children_20x: np.ndarray
    patch_5x: np.ndarray
    grid_row: int
    grid_col: int
    slide_id: str
    slide_label: int = -1
    region_histogram: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.slide_id, self.grid_row, self.grid_col)

    def with_images(self, parent_20x: np.ndarray, patch_5x: np.ndarray) -> "PyramidPatchPair":
        """Copy with a new parent and 5x patch; children are re-derived from the parent."""
        return replace(self, parent_20x=parent_20x, children_20x=decompose_parent(parent_20x), patch_5x=patch_5x)


def _check_image(image: np.ndarray, side: int, name: str) -> None:
    if image.ndim != 3 or image.shape != (side, side, 3):
        raise GeometryError(f"{name} must be {side}x{side}x3, got {tuple(image.shape)}")


def child_index_of_pixel(row: int, col: int) -> int:
    """Index of the child that contains parent pixel (row, col)."""
    return GRID_SIDE * (row // CHILD_SIDE) + col // CHILD_SIDE


def decompose_parent(parent: np.ndarray) -> np.ndarray:
    """
    Split an 896x896 parent into 16 non-overlapping 224x224 children.

    Args:
        parent: 896 x 896 x 3 image

    Returns:
        np.ndarray: 16 x 224 x 224 x 3 array; child i covers rows
        [224*(i//4), +224) and cols [224*(i%4), +224)

    Raises:
        GeometryError: If the input is not 896x896x3
    """
    _check_image(parent, PARENT_SIDE, "parent")
    blocks = parent.reshape(GRID_SIDE, CHILD_SIDE, GRID_SIDE, CHILD_SIDE, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(N_CHILDREN, CHILD_SIDE, CHILD_SIDE, 3))


def reassemble_children(children: np.ndarray) -> np.ndarray:
    """Inverse of :func:`decompose_parent`."""
    if children.shape != (N_CHILDREN, CHILD_SIDE, CHILD_SIDE, 3):
        raise GeometryError(f"children must be 16x224x224x3, got {tuple(children.shape)}")
    grid = children.reshape(GRID_SIDE, GRID_SIDE, CHILD_SIDE, CHILD_SIDE, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(grid.reshape(PARENT_SIDE, PARENT_SIDE, 3))


def downsample_to_5x(parent: np.ndarray) -> np.ndarray:
    """
    Box-filter a 20x parent down to its 5x patch.

    Each output pixel is the mean of the matching 4x4 input block, rounded half
    up to the nearest 8-bit value.

    Args:
        parent: 896 x 896 x 3 uint8 image

    Returns:
        np.ndarray: 224 x 224 x 3 uint8 image

    Raises:
        GeometryError: If the input is not 896x896x3
    """
    _check_image(parent, PARENT_SIDE, "parent")
    blocks = parent.reshape(CHILD_SIDE, DOWNSCALE, CHILD_SIDE, DOWNSCALE, 3).astype(np.float64)
    means = blocks.mean(axis=(1, 3))
    return np.clip(np.floor(means + 0.5), 0, 255).astype(np.uint8)


def background_fraction(image: np.ndarray, white_threshold: float) -> float:
    """Fraction of pixels whose every channel is at or above ``white_threshold``."""
    return float(np.all(image >= white_threshold, axis=-1).mean())


def make_pair(
    parent: np.ndarray,
    grid_row: int,
    grid_col: int,
    slide_id: str,
    slide_label: int = -1,
    region_histogram: Tuple[int, ...] = (),
) -> PyramidPatchPair:
    """Build a pair from a parent tile, deriving children and the 5x patch."""
    parent = np.ascontiguousarray(parent, dtype=np.uint8)
    return PyramidPatchPair(
        parent_20x=parent,
        children_20x=decompose_parent(parent),
        patch_5x=downsample_to_5x(parent),
        grid_row=grid_row,
        grid_col=grid_col,
        slide_id=slide_id,
        slide_label=slide_label,
        region_histogram=tuple(int(v) for v in region_histogram),
    )


def tessellate(wsi: "SyntheticWsi", background_threshold: Optional[float] = None) -> List[PyramidPatchPair]:
    """
    Tessellate a slide into non-overlapping parent tiles, row-major.

    Args:
        wsi: Slide with dimensions that are multiples of 896
        background_threshold: Optional whiteness level; tiles whose pixels are
            mostly at or above it are skipped. Disabled by default.

    Returns:
        List[PyramidPatchPair]: (H/896) * (W/896) pairs when filtering is off
    """
    if wsi.height % PARENT_SIDE or wsi.width % PARENT_SIDE:
        raise GeometryError(f"Slide {wsi.id} is {wsi.height}x{wsi.width}, not a multiple of {PARENT_SIDE}")

    pairs = []
    for row in range(wsi.height // PARENT_SIDE):
        for col in range(wsi.width // PARENT_SIDE):
            rows = slice(row * PARENT_SIDE, (row + 1) * PARENT_SIDE)
            cols = slice(col * PARENT_SIDE, (col + 1) * PARENT_SIDE)
            parent = wsi.pixels[rows, cols]
            if background_threshold is not None and background_fraction(parent, background_threshold) > 0.5:
                logger.debug("Skipping background tile %s (%d, %d)", wsi.id, row, col)
                continue
            histogram = np.bincount(wsi.region_labels[rows, cols].ravel(), minlength=wsi.n_classes)
            pairs.append(make_pair(parent, row, col, wsi.id, wsi.slide_label, tuple(histogram.tolist())))
    return pairs
