#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Distillation losses.

Both terms are negative cosine similarities, so each lies in [-1, 1] and the
weighted total lies in [-(lambda_global + lambda_local), lambda_global + lambda_local].
Near-zero feature norms raise instead of producing NaN.
"""

from dataclasses import dataclass
from typing import Dict

import torch

from ..models.vit import ShapeError
from ..pyramid.tiling import N_CHILDREN

NORM_EPS = 1e-12


class DegenerateFeatureError(ValueError):
    """A feature vector has (near) zero norm; cosine similarity is undefined."""


@dataclass
class DistillLossBreakdown:
    """
    Weighted loss with its two terms (tensors, so ``total`` can be backpropagated).

    Attributes:
        total: lambda_global * global_term + lambda_local * local_term
        global_term: Class-token alignment loss
        local_term: Region-wise alignment loss
    """

    total: torch.Tensor
    global_term: torch.Tensor
    local_term: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "L": float(self.total.detach()),
            "L_global": float(self.global_term.detach()),
            "L_local": float(self.local_term.detach()),
        }


def cosine_loss(a: torch.Tensor, b: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """
    Negative cosine similarity, averaged over any leading axes.

    Args:
        a: [..., D]
        b: [..., D], same shape as ``a``
        eps: Minimum accepted norm

    Returns:
        torch.Tensor: Scalar in [-1, 1]

    Raises:
        ShapeError: On shape mismatch
        DegenerateFeatureError: If any vector norm is <= eps
    """
    if a.shape != b.shape:
        raise ShapeError(f"cosine_loss shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    norm_a = a.norm(dim=-1)
    norm_b = b.norm(dim=-1)
    if bool((norm_a <= eps).any()) or bool((norm_b <= eps).any()):
        raise DegenerateFeatureError(f"Feature norm at or below {eps}; cosine similarity undefined")
    cosine = (a * b).sum(dim=-1) / (norm_a * norm_b)
    return -cosine.clamp(-1.0, 1.0).mean()


def local_loss(teacher_regions: torch.Tensor, student_regions: torch.Tensor) -> torch.Tensor:
    """
    Mean negative cosine over the 16 spatially matched regions.

    Args:
        teacher_regions: [..., 16, d_T]
        student_regions: [..., 16, d_T] (projected pooled student features)
    """
    if teacher_regions.shape[-2] != N_CHILDREN:
        raise ShapeError(f"Expected 16 regions, got {tuple(teacher_regions.shape)}")
    return cosine_loss(student_regions, teacher_regions)


def total_loss(global_term: torch.Tensor, local_term: torch.Tensor, config) -> DistillLossBreakdown:
    """Weight the two terms with ``config.lambda_global`` and ``config.lambda_local``."""
    total = config.lambda_global * global_term + config.lambda_local * local_term
    return DistillLossBreakdown(total=total, global_term=global_term, local_term=local_term)
