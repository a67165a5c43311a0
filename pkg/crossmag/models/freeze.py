#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Block-level freezing for selective fine-tuning.

With k trainable blocks, only the last k transformer blocks (and the final
norm when k > 0) keep ``requires_grad``; the patch embedding, class token,
position embedding and the first depth - k blocks are frozen. Optimizers must
be built from :func:`trainable_parameters` so frozen tensors are never touched,
not even by weight decay.
"""

from dataclasses import dataclass, field
from typing import Iterable, List

from torch import nn

from ..utils.logging_setup import get_logger
from .vit import VisionTransformer

logger = get_logger(__name__)


class FreezePlanError(ValueError):
    """Requested number of trainable blocks is outside [0, depth]."""


@dataclass(frozen=True)
class FreezePlan:
    """
    Which backbone parameters may change.

    The final norm counts as part of the last block: it is trainable whenever
    k > 0, so ``trainable_names`` lists it alongside the block tensors.

    Attributes:
        n_trainable_blocks: k, the number of trailing trainable blocks
        depth: Total number of blocks
        trainable_names: Backbone parameter names left trainable
    """

    n_trainable_blocks: int
    depth: int
    trainable_names: List[str] = field(default_factory=list)

    @property
    def frozen_blocks(self) -> range:
        return range(0, self.depth - self.n_trainable_blocks)


def set_freeze_plan(encoder: VisionTransformer, k: int) -> FreezePlan:
    """
    Mark exactly the last ``k`` blocks trainable.

    Args:
        encoder: Backbone to modify in place
        k: Number of trainable trailing blocks, 0 <= k <= depth

    Returns:
        FreezePlan: Resulting plan

    Raises:
        FreezePlanError: If k is out of range
    """
    depth = len(encoder.blocks)
    if not isinstance(k, int) or isinstance(k, bool) or not 0 <= k <= depth:
        raise FreezePlanError(f"n_trainable_blocks must be in [0, {depth}], got {k!r}")

    encoder.requires_grad_(False)
    for block in encoder.blocks[depth - k :]:
        block.requires_grad_(True)
    if k > 0:
        encoder.norm.requires_grad_(True)

    names = [name for name, param in encoder.named_parameters() if param.requires_grad]
    logger.info("Freeze plan: %d/%d blocks trainable (%d tensors)", k, depth, len(names))
    return FreezePlan(n_trainable_blocks=k, depth=depth, trainable_names=names)


def trainable_parameters(*modules: nn.Module) -> List[nn.Parameter]:
    """Parameters with ``requires_grad`` across ``modules``, deduplicated, in order."""
    seen = set()
    params = []
    for module in modules:
        for param in module.parameters():
            if param.requires_grad and id(param) not in seen:
                seen.add(id(param))
                params.append(param)
    return params


def resolve_block_grid(grid: Iterable, depth: int) -> List[int]:
    """
    Turn an ablation grid (ints or "all") into block counts for a ``depth``-block encoder.

    Entries above ``depth`` are clamped to it with a warning so a fixed grid
    still runs on shallow encoders; duplicates are dropped, order is kept.

    >>> resolve_block_grid([0, 1, 2, 4, 6, "all"], depth=12)
    [0, 1, 2, 4, 6, 12]
    >>> resolve_block_grid([0, 1, 2, 4, 6, "all"], depth=4)
    [0, 1, 2, 4]

    Raises:
        FreezePlanError: If an entry is negative or not an integer
    """
    resolved = []
    for entry in grid:
        if str(entry).lower() == "all":
            k = depth
        else:
            try:
                k = int(entry)
            except (TypeError, ValueError) as e:
                raise FreezePlanError(f"Ablation entry {entry!r} is not an integer or 'all'") from e
        if k < 0:
            raise FreezePlanError(f"Ablation entry {entry!r} is negative")
        if k > depth:
            logger.warning("Ablation entry %r exceeds encoder depth %d; using %d", entry, depth, depth)
            k = depth
        if k not in resolved:
            resolved.append(k)
    return resolved
