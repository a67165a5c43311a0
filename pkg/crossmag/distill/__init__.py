"""Cross-magnification distillation: pooling, heads, losses, schedule and training loop."""

from .heads import ProjectionHead, build_heads, project
from .losses import DegenerateFeatureError, DistillLossBreakdown, cosine_loss, local_loss, total_loss
from .pooling import spatial_pool, teacher_global, tokens_to_grid
from .schedule import REFERENCE_TOTAL_STEPS, DistillConfig, ema_update, ema_update_module, lr_at
from .trainer import (
    DistillResult,
    DistillTrainer,
    LossLog,
    NonFiniteLossError,
    distillation_loss,
    pairs_from_manifest,
    train_distill,
)

__all__ = [
    "REFERENCE_TOTAL_STEPS",
    "DegenerateFeatureError",
    "DistillConfig",
    "DistillLossBreakdown",
    "DistillResult",
    "DistillTrainer",
    "LossLog",
    "NonFiniteLossError",
    "ProjectionHead",
    "build_heads",
    "cosine_loss",
    "distillation_loss",
    "ema_update",
    "ema_update_module",
    "local_loss",
    "lr_at",
    "pairs_from_manifest",
    "project",
    "spatial_pool",
    "teacher_global",
    "tokens_to_grid",
    "total_loss",
    "train_distill",
]
