"""Bag construction, attention-based MIL aggregation, frozen and end-to-end training."""

from .abmil import AbmilHead, EmptyBagError, abmil_forward, build_head
from .bags import (
    Bag,
    MissingPatchError,
    SlidePatches,
    build_bag,
    build_bags,
    embed_patches,
    load_bags,
    load_slide_patches,
    save_bags,
)
from .train import (
    AblationResult,
    ActivationBudgetError,
    FoldError,
    MilRunConfig,
    MilRunResult,
    kfold_by_slide,
    run_block_ablation,
    train_e2e_fold,
    train_mil_e2e,
    train_mil_frozen,
)

__all__ = [
    "AbmilHead",
    "AblationResult",
    "ActivationBudgetError",
    "Bag",
    "EmptyBagError",
    "FoldError",
    "MilRunConfig",
    "MilRunResult",
    "MissingPatchError",
    "SlidePatches",
    "abmil_forward",
    "build_bag",
    "build_bags",
    "build_head",
    "embed_patches",
    "kfold_by_slide",
    "load_bags",
    "load_slide_patches",
    "run_block_ablation",
    "save_bags",
    "train_e2e_fold",
    "train_mil_e2e",
    "train_mil_frozen",
]
