#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Projection heads mapping student features (d_S) into the teacher space (d_T)."""

import torch
from torch import nn
import torch.nn.functional as F

from ..models.vit import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ProjectionHead(nn.Module):
    """
    ``W2 . GELU(BN(W1 x + b1)) + b2``.

    Inputs may be [N, d_S] or [B, R, d_S]; for the latter the batch and region
    axes are normalized together.
    """

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.norm = nn.BatchNorm1d(out_dim, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Projection head expects last dim {self.in_dim}, got {tuple(x.shape)}")
        leading = x.shape[:-1]
        flat = x.reshape(-1, self.in_dim)
        out = self.fc2(F.gelu(self.norm(self.fc1(flat))))
        return out.reshape(*leading, self.out_dim)


def build_heads(student_dim: int, teacher_dim: int, seed: int = None) -> nn.ModuleDict:
    """Global and local heads, seeded when ``seed`` is given."""
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        return nn.ModuleDict(
            {"global": ProjectionHead(student_dim, teacher_dim), "local": ProjectionHead(student_dim, teacher_dim)}
        )


def project(head: ProjectionHead, x: torch.Tensor) -> torch.Tensor:
    """
    Map student features into the teacher space.

    A single vector [d_S] is treated as a batch of one and returned as [d_T];
    in training mode BatchNorm needs more than one row.
    """
    if x.ndim == 1:
        return head(x[None])[0]
    return head(x)
