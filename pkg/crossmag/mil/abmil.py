#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Attention-based MIL aggregation.

    a_i = softmax_i(w^T tanh(V h_i))            (plain)
    a_i = softmax_i(w^T (tanh(V h_i) * sigmoid(U h_i)))   (gated)
    z   = sum_i a_i h_i
    scores = classifier(z)

Attention weights are non-negative and sum to one over the bag; class scores
do not depend on instance order.
"""

from typing import Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..models.vit import ShapeError


class EmptyBagError(ValueError):
    """A bag has no instances."""


class AbmilHead(nn.Module):
    """
    Attention pooling plus a linear classifier.

    Attributes:
        in_dim: Instance embedding size (d_S)
        n_classes: Output classes
        attention_dim: d_a
        gated: Multiply the tanh branch by a sigmoid gate
        projection_dim: Optional Linear+ReLU projection applied to instances first
    """

    def __init__(
        self,
        in_dim: int,
        n_classes: int,
        attention_dim: int = 64,
        gated: bool = False,
        projection_dim: Optional[int] = None,
    ):
        super().__init__()
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.attention_dim = attention_dim
        self.gated = gated
        self.projection_dim = projection_dim

        if projection_dim:
            self.projection = nn.Sequential(nn.Linear(in_dim, projection_dim), nn.ReLU())
            feature_dim = projection_dim
        else:
            self.projection = nn.Identity()
            feature_dim = in_dim

        self.V = nn.Linear(feature_dim, attention_dim, bias=False)
        self.U = nn.Linear(feature_dim, attention_dim, bias=False) if gated else None
        self.w = nn.Linear(attention_dim, 1, bias=False)
        self.classifier = nn.Linear(feature_dim, n_classes)

    def attention_logits(self, features: torch.Tensor) -> torch.Tensor:
        hidden = torch.tanh(self.V(features))
        if self.U is not None:
            hidden = hidden * torch.sigmoid(self.U(features))
        return self.w(hidden).squeeze(-1)

    def forward(self, instances: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            instances: [M, d_S]

        Returns:
            Tuple of (scores [n_classes], attention [M])
        """
        if instances.ndim != 2 or instances.shape[-1] != self.in_dim:
            raise ShapeError(f"Expected [M, {self.in_dim}] instances, got {tuple(instances.shape)}")
        if instances.shape[0] == 0:
            raise EmptyBagError("Cannot aggregate an empty bag")
        features = self.projection(instances)
        attention = torch.softmax(self.attention_logits(features), dim=0)
        pooled = attention @ features
        return self.classifier(pooled), attention


def build_head(
    in_dim: int,
    n_classes: int,
    attention_dim: int = 64,
    gated: bool = False,
    projection_dim: Optional[int] = None,
    seed: Optional[int] = None,
) -> AbmilHead:
    """Construct an AbmilHead, seeding initialization when ``seed`` is given."""
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        return AbmilHead(in_dim, n_classes, attention_dim, gated, projection_dim)


def abmil_forward(bag, head: AbmilHead) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Aggregate a bag.

    Args:
        bag: Bag, numpy [M, d] or tensor [M, d]
        head: Aggregator

    Returns:
        Tuple of (class scores [n_classes], attention [M])

    Raises:
        EmptyBagError: If the bag has no instances
    """
    embeddings: Union[np.ndarray, torch.Tensor] = getattr(bag, "embeddings", bag)
    if isinstance(embeddings, np.ndarray):
        embeddings = torch.from_numpy(np.ascontiguousarray(embeddings))
    dtype = next(head.parameters()).dtype
    return head(embeddings.to(dtype))
