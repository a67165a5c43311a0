#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Distillation hyperparameters, the learning-rate schedule and the EMA update.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable

import torch
from torch import nn

from ..models.vit import ShapeError

# Iteration count reported for the full-scale run; recorded for reference only.
REFERENCE_TOTAL_STEPS = 30260
LR_MIN = 0.0


@dataclass(frozen=True)
class DistillConfig:
    """
    Distillation settings; field names match the ``distill`` config section.

    Attributes:
        lambda_global: Weight of the class-token loss
        lambda_local: Weight of the region loss
        peak_lr: Learning rate at step 0 (after warmup)
        total_steps: T, number of optimization steps
        ema_decay: EMA momentum m
        batch_size: Pairs per step
        weight_decay: Decoupled weight decay
        warmup_steps: Linear warmup steps before the cosine decay
        augment: Apply paired augmentation to every batch
        log_every: Steps between logger summaries
    """

    lambda_global: float = 1.0
    lambda_local: float = 0.5
    peak_lr: float = 5e-4
    total_steps: int = 200
    ema_decay: float = 0.999
    batch_size: int = 32
    weight_decay: float = 0.04
    warmup_steps: int = 0
    augment: bool = True
    log_every: int = 50

    def __post_init__(self):
        if self.lambda_global < 0 or self.lambda_local < 0:
            raise ValueError("lambda_global and lambda_local must be non-negative")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.peak_lr < 0:
            raise ValueError(f"peak_lr must be non-negative, got {self.peak_lr}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for batch-statistics normalization")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(f"warmup_steps must be in [0, total_steps), got {self.warmup_steps}")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")

    @property
    def loss_bound(self) -> float:
        return self.lambda_global + self.lambda_local

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "DistillConfig":
        """Build from the ``distill`` config section."""
        fields = cls.__dataclass_fields__
        return cls(**{key: value for key, value in section.items() if key in fields})


def lr_at(step: int, config: DistillConfig) -> float:
    """
    Cosine-annealed learning rate with optional linear warmup.

    >>> lr_at(0, DistillConfig(total_steps=100))
    0.0005
    >>> lr_at(100, DistillConfig(total_steps=100))
    0.0
    """
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    total = config.total_steps
    if step >= total:
        return LR_MIN
    warmup = config.warmup_steps
    if step < warmup:
        return config.peak_lr * (step + 1) / warmup
    progress = (step - warmup) / (total - warmup)
    return LR_MIN + 0.5 * (config.peak_lr - LR_MIN) * (1.0 + math.cos(math.pi * progress))


@torch.no_grad()
def ema_update(ema_params: Iterable[torch.Tensor], params: Iterable[torch.Tensor], decay: float) -> None:
    """
    In place ``ema <- decay * ema + (1 - decay) * param``.

    ``decay = 1`` leaves ``ema`` untouched and ``decay = 0`` copies ``param``
    exactly.

    Raises:
        ShapeError: If the two parameter lists differ in length or shapes
    """
    ema_params = list(ema_params)
    params = list(params)
    if len(ema_params) != len(params):
        raise ShapeError(f"EMA has {len(ema_params)} tensors, source has {len(params)}")
    for ema_p, p in zip(ema_params, params):
        if ema_p.shape != p.shape:
            raise ShapeError(f"EMA tensor shape {tuple(ema_p.shape)} != {tuple(p.shape)}")
        ema_p.lerp_(p.detach(), 1.0 - decay)


@torch.no_grad()
def ema_update_module(ema_module: nn.Module, module: nn.Module, decay: float) -> None:
    """EMA over parameters; buffers (normalization statistics) are copied."""
    ema_update(ema_module.parameters(), module.parameters(), decay)
    for ema_b, b in zip(ema_module.buffers(), module.buffers()):
        ema_b.copy_(b)
