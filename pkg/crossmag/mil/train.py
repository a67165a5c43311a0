#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
MIL Training Module
-------------------

Slide-level training with k-fold cross-validation split by slide.

- ``train_mil_frozen``: precomputed bags, only the ABMIL head is optimized.
- ``train_mil_e2e``: raw 5x patches flow through a partially frozen encoder
  (last k blocks trainable) with block-level recompute; encoder and head are
  optimized jointly. k = 0 reduces to the frozen path on the encoder's
  embeddings.
- ``run_block_ablation``: one cross-validated e2e run per k in a grid.

Fold metrics are rows ``{fold, mode, k, split, auc, acc, f1, ...}``; the
summary reports mean and standard deviation across folds.
"""

import copy
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch import nn
from tqdm import tqdm

from ..evaluation.metrics import evaluate_predictions
from ..evaluation.reports import summarize_folds
from ..models.encoders import checkpointed_forward
from ..models.freeze import resolve_block_grid, set_freeze_plan, trainable_parameters
from ..models.vit import VisionTransformer
from ..utils.errors import InvariantViolation
from ..utils.logging_setup import get_logger
from .abmil import AbmilHead, abmil_forward
from .bags import Bag, SlidePatches, embed_patches

logger = get_logger(__name__)

MODES = ("frozen", "e2e")


class FoldError(ValueError):
    """Cross-validation cannot be set up (e.g. fewer slides than folds)."""


class ActivationBudgetError(InvariantViolation):
    """Retained activations of one bag exceed the configured budget."""

    def __init__(self, measured_mb: float, budget_mb: float, n_patches: int):
        super().__init__(
            f"Bag of {n_patches} patches retains {measured_mb:.2f} MB of activations, "
            f"budget is {budget_mb:.2f} MB; lower max_patches_per_bag or enable checkpointing"
        )
        self.measured_mb = measured_mb
        self.budget_mb = budget_mb
        self.n_patches = n_patches


@dataclass(frozen=True)
class MilRunConfig:
    """
    MIL run settings.

    Attributes:
        mode: "frozen" or "e2e"
        n_trainable_blocks: k; ignored in frozen mode
        epochs: Passes over the training slides per fold
        lr: AdamW learning rate
        weight_decay: AdamW decoupled weight decay
        folds: Number of cross-validation folds
        seed: Fold assignment, slide order and initialization seed
        attention_dim: d_a
        gated: Gated attention
        class_weighted: Inverse-frequency class weights in the loss
        checkpointing: Recompute encoder blocks on backward (e2e)
        max_patches_per_bag: Patches sampled per bag per step (e2e), None for all
        activation_budget_mb: Maximum retained activation size per bag (e2e)
        projection_dim: Instance projection before aggregation, None for identity
        n_boot: Bootstrap resamples for metric intervals
    """

    mode: str = "frozen"
    n_trainable_blocks: int = 0
    epochs: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-4
    folds: int = 5
    seed: int = 0
    attention_dim: int = 64
    gated: bool = False
    class_weighted: bool = False
    checkpointing: bool = True
    max_patches_per_bag: Optional[int] = None
    activation_budget_mb: Optional[float] = None
    projection_dim: Optional[int] = None
    n_boot: int = 1000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode}")
        if self.folds < 2:
            raise ValueError(f"folds must be at least 2, got {self.folds}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.max_patches_per_bag is not None and self.max_patches_per_bag < 1:
            raise ValueError("max_patches_per_bag must be positive when set")

    @classmethod
    def from_config(cls, section: Dict[str, Any], mode: str, seed: int = 0, **overrides: Any) -> "MilRunConfig":
        """Build from the ``mil`` or ``e2e`` config section."""
        values = {key: value for key, value in section.items() if key in cls.__dataclass_fields__}
        values.update(overrides)
        return cls(mode=mode, seed=seed, **values)


@dataclass
class MilRunResult:
    """
    Outcome of a cross-validated MIL run.

    Attributes:
        rows: Per-fold metric rows (test and, when given, external splits)
        predictions: Per-slide predictions with fold and split
        heads: Trained head per fold
        encoders: Trained encoder per fold (e2e with k > 0 only)
    """

    rows: List[Dict[str, Any]] = field(default_factory=list)
    predictions: List[Dict[str, Any]] = field(default_factory=list)
    heads: List[AbmilHead] = field(default_factory=list)
    encoders: List[VisionTransformer] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def summary(self) -> pd.DataFrame:
        """Mean and std across folds per (mode, k, split)."""
        return summarize_folds(self.frame(), by=["mode", "k", "split"])


def fold_seeds(seed: int, folds: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(folds)]


def kfold_by_slide(labels: Sequence[int], folds: int, seed: int) -> List[np.ndarray]:
    """
    Stratified fold assignment; every slide is tested exactly once.

    Args:
        labels: Slide labels
        folds: Number of folds
        seed: Shuffle seed

    Returns:
        List of test index arrays, one per fold

    Raises:
        FoldError: If there are fewer slides than folds
    """
    labels = np.asarray(labels)
    if labels.size < folds:
        raise FoldError(f"{labels.size} slides cannot be split into {folds} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.size, dtype=int)
    offset = 0
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        assignment[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return [np.flatnonzero(assignment == fold) for fold in range(folds)]


def _loss_fn(labels: np.ndarray, n_classes: int, class_weighted: bool, dtype: torch.dtype) -> nn.Module:
    if not class_weighted:
        return nn.CrossEntropyLoss()
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    weights = np.where(counts > 0, labels.size / (n_classes * np.maximum(counts, 1)), 0.0)
    return nn.CrossEntropyLoss(weight=torch.as_tensor(weights, dtype=dtype))


def _head_dtype(head: nn.Module) -> torch.dtype:
    return next(head.parameters()).dtype


def train_head(head: AbmilHead, bags: Sequence[Bag], config: MilRunConfig, seed: int) -> AbmilHead:
    """Optimize ``head`` in place on ``bags`` with batch size one."""
    labels = np.array([bag.label for bag in bags])
    loss_fn = _loss_fn(labels, head.n_classes, config.class_weighted, _head_dtype(head))
    optimizer = torch.optim.AdamW(head.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(seed)
    head.train()
    for _ in range(config.epochs):
        for i in rng.permutation(len(bags)):
            scores, _ = abmil_forward(bags[i], head)
            loss = loss_fn(scores[None], torch.tensor([bags[i].label]))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
    head.eval()
    return head


@torch.no_grad()
def predict_bags(head: AbmilHead, bags: Sequence[Bag]) -> np.ndarray:
    """Class probabilities [N, C]."""
    head.eval()
    probs = [torch.softmax(abmil_forward(bag, head)[0], dim=0) for bag in bags]
    return torch.stack(probs).to(torch.float64).numpy()


def _evaluate(
    head: AbmilHead,
    bags: Sequence[Bag],
    fold: int,
    split: str,
    mode: str,
    k: int,
    config: MilRunConfig,
    seed: int,
) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    probs = predict_bags(head, bags)
    labels = np.array([bag.label for bag in bags])
    report = evaluate_predictions(probs, labels, n_boot=config.n_boot, seed=seed, n_classes=head.n_classes)
    row = {"fold": fold, "mode": mode, "k": k, "split": split, **report.as_row()}
    predictions = []
    for bag, prob in zip(bags, probs):
        entry = {"slide_id": bag.slide_id, "fold": fold, "split": split, "label": int(bag.label)}
        entry["pred"] = int(prob.argmax())
        entry.update({f"prob_{c}": float(p) for c, p in enumerate(prob)})
        predictions.append(entry)
    return row, predictions


def _run_folds_on_bags(
    bags: Sequence[Bag],
    head: AbmilHead,
    config: MilRunConfig,
    mode: str,
    k: int,
    external: Optional[Sequence[Bag]],
    progress: bool,
) -> MilRunResult:
    labels = [bag.label for bag in bags]
    splits = kfold_by_slide(labels, config.folds, config.seed)
    seeds = fold_seeds(config.seed, config.folds)
    result = MilRunResult()

    for fold, test_idx in enumerate(tqdm(splits, desc=f"MIL folds ({mode})", disable=not progress)):
        test_set = set(test_idx.tolist())
        train_bags = [bag for i, bag in enumerate(bags) if i not in test_set]
        test_bags = [bags[i] for i in test_idx]

        fold_head = train_head(copy.deepcopy(head), train_bags, config, seeds[fold])
        test_row, predictions = _evaluate(fold_head, test_bags, fold, "test", mode, k, config, seeds[fold])
        result.rows.append(test_row)
        result.predictions.extend(predictions)
        if external:
            row, predictions = _evaluate(fold_head, external, fold, "external", mode, k, config, seeds[fold])
            result.rows.append(row)
            result.predictions.extend(predictions)
        result.heads.append(fold_head)
        logger.info(
            "Fold %d/%d (%s, k=%d): auc %.3f acc %.3f f1 %.3f",
            fold + 1,
            config.folds,
            mode,
            k,
            test_row["auc"],
            test_row["acc"],
            test_row["f1"],
        )
    return result


def train_mil_frozen(
    bags: Sequence[Bag],
    head: AbmilHead,
    config: MilRunConfig,
    external: Optional[Sequence[Bag]] = None,
    progress: bool = True,
) -> MilRunResult:
    """
    Cross-validated head-only training on precomputed bags.

    The head passed in is a template: each fold trains its own deep copy, so
    every fold starts from the same initialization and the template is never
    modified.

    Args:
        bags: One bag per slide
        head: Template head
        config: Run settings
        external: Optional bags from another cohort, evaluated by every fold model
        progress: Show a progress bar

    Returns:
        MilRunResult: Fold rows, predictions and trained heads

    Raises:
        FoldError: If there are fewer slides than folds
    """
    return _run_folds_on_bags(bags, head, config, "frozen", 0, external, progress)


def _sample_patches(patches: np.ndarray, cap: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if cap is None or patches.shape[0] <= cap:
        return patches
    return patches[np.sort(rng.choice(patches.shape[0], size=cap, replace=False))]


def train_e2e_fold(
    slides: Sequence[SlidePatches],
    encoder: VisionTransformer,
    head: AbmilHead,
    config: MilRunConfig,
    seed: int,
    max_steps: Optional[int] = None,
) -> Tuple[VisionTransformer, AbmilHead]:
    """
    Jointly optimize the last k encoder blocks and ``head`` in place.

    Frozen backbone tensors are checked bit for bit after training.

    Args:
        slides: Training slides
        encoder: Encoder; its freeze plan is set to ``config.n_trainable_blocks``
        head: Head
        config: Run settings
        seed: Slide order and patch sampling seed
        max_steps: Stop after this many optimization steps

    Returns:
        Tuple of the trained (encoder, head)

    Raises:
        ActivationBudgetError: If a bag exceeds ``activation_budget_mb``
        InvariantViolation: If a frozen tensor changed
    """
    plan = set_freeze_plan(encoder, config.n_trainable_blocks)
    trainable = set(plan.trainable_names)
    frozen = {name: p.detach().clone() for name, p in encoder.named_parameters() if name not in trainable}
    dtype = _head_dtype(head)
    labels = np.array([slide.label for slide in slides])
    loss_fn = _loss_fn(labels, head.n_classes, config.class_weighted, dtype)
    optimizer = torch.optim.AdamW(
        trainable_parameters(encoder, head), lr=config.lr, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(seed)

    encoder.train()
    head.train()
    steps = 0
    for _ in range(config.epochs):
        for i in rng.permutation(len(slides)):
            if max_steps is not None and steps >= max_steps:
                break
            patches = _sample_patches(slides[i].patches, config.max_patches_per_bag, rng)
            handle = checkpointed_forward(encoder, patches, use_checkpoint=config.checkpointing)
            if config.activation_budget_mb is not None:
                measured_mb = handle.retained_elements * handle.class_token.element_size() / 2**20
                if measured_mb > config.activation_budget_mb:
                    raise ActivationBudgetError(measured_mb, config.activation_budget_mb, patches.shape[0])
            scores, _ = head(handle.class_token.to(dtype))
            loss = loss_fn(scores[None], torch.tensor([slides[i].label]))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            steps += 1

    for name, param in encoder.named_parameters():
        if name in frozen and not torch.equal(frozen[name], param.detach()):
            raise InvariantViolation(f"Frozen encoder tensor {name} changed during e2e training")
    encoder.eval()
    head.eval()
    return encoder, head


def train_mil_e2e(
    slides: Sequence[SlidePatches],
    encoder: VisionTransformer,
    head: AbmilHead,
    config: MilRunConfig,
    external: Optional[Sequence[SlidePatches]] = None,
    progress: bool = True,
) -> MilRunResult:
    """
    Cross-validated end-to-end training with the last k blocks unfrozen.

    Args:
        slides: Raw 5x patches per slide
        encoder: Template encoder (copied per fold, never modified)
        head: Template head
        config: Run settings; ``n_trainable_blocks`` is k
        external: Optional external-cohort slides
        progress: Show a progress bar

    Returns:
        MilRunResult: Fold rows with mode "e2e", predictions, heads and encoders
    """
    k = config.n_trainable_blocks
    if k == 0:
        bags = [Bag(s.slide_id, embed_patches(encoder, s.patches), s.label) for s in slides]
        external_bags = [Bag(s.slide_id, embed_patches(encoder, s.patches), s.label) for s in external or ()]
        return _run_folds_on_bags(bags, head, config, "e2e", 0, external_bags or None, progress)

    splits = kfold_by_slide([s.label for s in slides], config.folds, config.seed)
    seeds = fold_seeds(config.seed, config.folds)
    result = MilRunResult()

    for fold, test_idx in enumerate(tqdm(splits, desc=f"e2e folds (k={k})", disable=not progress)):
        test_set = set(test_idx.tolist())
        train_slides = [s for i, s in enumerate(slides) if i not in test_set]
        fold_encoder, fold_head = train_e2e_fold(
            train_slides, copy.deepcopy(encoder), copy.deepcopy(head), config, seeds[fold]
        )

        evaluations = [("test", [slides[i] for i in test_idx])]
        if external:
            evaluations.append(("external", list(external)))
        for split, members in evaluations:
            bags = [Bag(s.slide_id, embed_patches(fold_encoder, s.patches), s.label) for s in members]
            row, predictions = _evaluate(fold_head, bags, fold, split, "e2e", k, config, seeds[fold])
            result.rows.append(row)
            result.predictions.extend(predictions)
        result.heads.append(fold_head)
        result.encoders.append(fold_encoder)
    return result


@dataclass
class AblationResult:
    """Per-k summary rows and the underlying fold rows."""

    summary: pd.DataFrame
    folds: pd.DataFrame


def run_block_ablation(
    slides: Sequence[SlidePatches],
    encoder: VisionTransformer,
    head: AbmilHead,
    config: MilRunConfig,
    grid: Iterable = (0, 1, 2, 4, 6, "all"),
    progress: bool = True,
) -> AblationResult:
    """
    One cross-validated e2e run per number of trainable blocks.

    Args:
        slides: Raw 5x patches per slide
        encoder: Template encoder
        head: Template head
        config: Base settings; ``n_trainable_blocks`` is replaced per grid entry
        grid: Block counts; "all" means the encoder depth
        progress: Show progress bars

    Returns:
        AblationResult: ``summary`` has exactly one row per resolved k
    """
    ks = resolve_block_grid(grid, len(encoder.blocks))
    fold_frames = []
    summaries = []
    for k in ks:
        run_config = replace(config, mode="e2e", n_trainable_blocks=k)
        result = train_mil_e2e(slides, encoder, head, run_config, progress=progress)
        frame = result.frame()
        fold_frames.append(frame)
        summary = summarize_folds(frame[frame["split"] == "test"], by=["k"])
        summaries.append(summary)
        logger.info("Ablation k=%d: auc %.3f +/- %.3f", k, summary["auc_mean"].iloc[0], summary["auc_std"].iloc[0])
    return AblationResult(
        summary=pd.concat(summaries, ignore_index=True), folds=pd.concat(fold_frames, ignore_index=True)
    )
