#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Spatial token mapping between the student grid and the teacher's children.

The student's G x G token grid is split into a 4 x 4 arrangement of
(G/4) x (G/4) windows. Region i covers grid rows ``(i // 4) * G/4`` onward and
columns ``(i % 4) * G/4`` onward, which is the same row-major order used by
:func:`crossmag.pyramid.tiling.decompose_parent` for the 20x children.
"""

from typing import Union

import torch

from ..models.encoders import StudentOutput, TeacherFeatures
from ..models.vit import ShapeError
from ..pyramid.tiling import GRID_SIDE, N_CHILDREN


def tokens_to_grid(tokens: torch.Tensor, grid_side: int) -> torch.Tensor:
    """Reshape row-major tokens [B, G^2, D] into a grid [B, G, G, D]."""
    if tokens.ndim != 3 or tokens.shape[1] != grid_side * grid_side:
        raise ShapeError(f"Expected [B, {grid_side * grid_side}, D] tokens, got {tuple(tokens.shape)}")
    return tokens.reshape(tokens.shape[0], grid_side, grid_side, tokens.shape[2])


def spatial_pool(tokens: Union[StudentOutput, torch.Tensor], grid_side: int = None) -> torch.Tensor:
    """
    Average the token grid into 16 region features.

    Args:
        tokens: StudentOutput or a [B, G^2, D] tensor
        grid_side: G; inferred from the token count when omitted

    Returns:
        torch.Tensor: [B, 16, D] in child-grid order

    Raises:
        ShapeError: If the token count is not a square or G is not divisible by 4
    """
    if isinstance(tokens, StudentOutput):
        tokens = tokens.tokens
    if grid_side is None:
        grid_side = int(round(tokens.shape[1] ** 0.5))
    if grid_side % GRID_SIDE:
        raise ShapeError(f"Token grid side {grid_side} is not divisible by {GRID_SIDE}")

    grid = tokens_to_grid(tokens, grid_side)
    window = grid_side // GRID_SIDE
    batch, dim = grid.shape[0], grid.shape[-1]
    regions = grid.reshape(batch, GRID_SIDE, window, GRID_SIDE, window, dim).mean(dim=(2, 4))
    return regions.reshape(batch, N_CHILDREN, dim)


def teacher_global(features: Union[TeacherFeatures, torch.Tensor]) -> torch.Tensor:
    """
    Mean of the 16 per-region teacher features.

    Args:
        features: TeacherFeatures or a [..., 16, d_T] tensor

    Returns:
        torch.Tensor: [..., d_T]
    """
    per_region = features.per_region if isinstance(features, TeacherFeatures) else features
    if per_region.shape[-2] != N_CHILDREN:
        raise ShapeError(f"Expected 16 regions, got {tuple(per_region.shape)}")
    return per_region.mean(dim=-2)
